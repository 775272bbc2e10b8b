"""Damped least-squares engine and the concrete spectroscopy fit models."""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tenacity import Retrying, retry_if_result, stop_after_attempt

from .broadening import broadened_spectrum, default_dip_axis, routing_metrics
from .core_model import TWO_PI, SystemParams, linewidth_from_rate
from .errors import (
    DegeneracyWarning,
    DetectionError,
    ModelEvaluationError,
    PreconditionError,
    RouterkitWarning,
)
from .manager import JobManager

logger = logging.getLogger(__name__)

FD_RELATIVE_STEP = 1e-6
INITIAL_DAMPING = 1e-3
MAX_DAMPING = 1e16
COST_TOLERANCE = 1e-10
RESOLUTION_GAIN = 1e-8
STEP_TOLERANCE = 1e-12
MAX_ITERATIONS = 500


@dataclass(frozen=True)
class Parameter:
    """One named fit parameter with bounds."""

    name: str
    value: float
    lower: float = -math.inf
    upper: float = math.inf
    fixed: bool = False
    # typical magnitude; sets the finite-difference step when value is near 0
    scale: float = 0.0


@dataclass(frozen=True)
class DataSeries:
    """x, y samples with optional 1-sigma errors on y."""

    x: np.ndarray
    y: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=1)
        y = np.array(self.y, dtype=float, ndmin=1)
        if x.shape != y.shape:
            raise PreconditionError(f"series has {x.size} x values but {y.size} y values")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise PreconditionError("series data must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), y.shape).copy()
            if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
                raise PreconditionError("series errors must be finite and > 0")
            object.__setattr__(self, "sigma", sigma)


ModelFunc = Callable[[Dict[str, float], int], np.ndarray]


@dataclass(frozen=True)
class FitProblem:
    """Model, data series and parameter vector for one least-squares fit.

    ``model(values, k)`` returns the prediction for series k. ``sharing``
    maps a parameter name to the series it influences; unlisted parameters
    influence every series.
    """

    model_id: str
    series: Tuple[DataSeries, ...]
    parameters: Tuple[Parameter, ...]
    model: ModelFunc
    sharing: Optional[Dict[str, Tuple[int, ...]]] = None

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "parameters", tuple(self.parameters))
        if not self.series:
            raise PreconditionError("fit problem needs at least one data series")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise PreconditionError(f"duplicate parameter names in {names}")
        for p in self.parameters:
            if not (p.lower <= p.value <= p.upper) or math.isnan(p.value):
                raise PreconditionError(f"initial {p.name}={p.value} outside [{p.lower}, {p.upper}]")
        if not any(not p.fixed for p in self.parameters):
            raise PreconditionError("fit problem has no free parameters")
        if self.sharing is not None:
            for name, indices in self.sharing.items():
                if name not in names:
                    raise PreconditionError(f"sharing map names unknown parameter {name!r}")
                if any(not 0 <= k < len(self.series) for k in indices):
                    raise PreconditionError(f"sharing map for {name!r} points past the series list")

    @property
    def free_names(self) -> List[str]:
        return [p.name for p in self.parameters if not p.fixed]

    def series_for(self, name: str) -> Tuple[int, ...]:
        if self.sharing is not None and name in self.sharing:
            return tuple(self.sharing[name])
        return tuple(range(len(self.series)))

    def with_values(self, values: Dict[str, float]) -> "FitProblem":
        params = tuple(
            replace(p, value=float(np.clip(values.get(p.name, p.value), p.lower, p.upper)))
            for p in self.parameters
        )
        return replace(self, parameters=params)


@dataclass(frozen=True)
class FitResult:
    model_id: str
    values: Dict[str, float]
    sigmas: Dict[str, float]
    fixed: Tuple[str, ...]
    chi2_red: float
    status: str
    n_iter: int
    cost: float
    covariance: np.ndarray = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_report(self, extra: Optional[Dict] = None) -> Dict:
        """Fit report record: {model, params, chi2_red, status, n_iter}."""

        def clean(v):
            return None if v is None or not math.isfinite(v) else float(v)

        report = {
            "model": self.model_id,
            "params": [
                {
                    "name": name,
                    "value": clean(value),
                    "sigma": clean(self.sigmas.get(name, 0.0)),
                    "fixed": name in self.fixed,
                }
                for name, value in self.values.items()
            ],
            "chi2_red": clean(self.chi2_red),
            "status": self.status,
            "n_iter": self.n_iter,
        }
        if extra:
            report["extra"] = {k: clean(v) if isinstance(v, float) else v for k, v in extra.items()}
        return report


def _fd_step(value: float, scale: float) -> float:
    magnitude = max(abs(value), abs(scale))
    return FD_RELATIVE_STEP * magnitude if magnitude > 0 else FD_RELATIVE_STEP


def numeric_jacobian(
    func: Callable[[np.ndarray], np.ndarray],
    x: Sequence[float],
    lower: Optional[Sequence[float]] = None,
    upper: Optional[Sequence[float]] = None,
    scale: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Central-difference Jacobian of a vector function, one-sided at bounds."""
    x = np.asarray(x, dtype=float)
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    scale = np.zeros(n) if scale is None else np.asarray(scale, dtype=float)
    columns = []
    for j in range(n):
        h = _fd_step(x[j], scale[j])
        xp, xm = x.copy(), x.copy()
        xp[j] = min(x[j] + h, upper[j])
        xm[j] = max(x[j] - h, lower[j])
        width = xp[j] - xm[j]
        if width == 0:
            columns.append(np.zeros_like(np.asarray(func(x), dtype=float)))
            continue
        columns.append((np.asarray(func(xp), dtype=float) - np.asarray(func(xm), dtype=float)) / width)
    return np.column_stack(columns)


class _Objective:
    """Weighted residuals of a FitProblem over its free parameters."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        free = [p for p in problem.parameters if not p.fixed]
        self.names = [p.name for p in free]
        self.lower = np.array([p.lower for p in free])
        self.upper = np.array([p.upper for p in free])
        self.scale = np.array([p.scale for p in free])
        self.x0 = np.array([p.value for p in free])
        self.base = {p.name: p.value for p in problem.parameters}
        self.weights = [1.0 / s.sigma if s.sigma is not None else np.ones_like(s.y) for s in problem.series]
        sizes = [s.y.size for s in problem.series]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_points = int(self.offsets[-1])
        self.affects = [problem.series_for(name) for name in self.names]

    def values(self, x: np.ndarray) -> Dict[str, float]:
        values = dict(self.base)
        values.update({name: float(v) for name, v in zip(self.names, x)})
        return values

    def block(self, x: np.ndarray, k: int) -> np.ndarray:
        values = self.values(x)
        series = self.problem.series[k]
        prediction = np.asarray(self.problem.model(values, k), dtype=float)
        if prediction.shape != series.y.shape:
            raise ModelEvaluationError(
                f"{self.problem.model_id}: series {k} prediction has shape {prediction.shape}, expected {series.y.shape}"
            )
        r = (series.y - prediction) * self.weights[k]
        if not np.all(np.isfinite(r)):
            raise ModelEvaluationError(f"{self.problem.model_id}: non-finite model output at {values}")
        return r

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.block(x, k) for k in range(len(self.problem.series))])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        J = np.zeros((self.n_points, x.size))
        for j, series_indices in enumerate(self.affects):
            h = _fd_step(x[j], self.scale[j])
            xp, xm = x.copy(), x.copy()
            xp[j] = min(x[j] + h, self.upper[j])
            xm[j] = max(x[j] - h, self.lower[j])
            width = xp[j] - xm[j]
            if width == 0:
                continue
            for k in series_indices:
                rows = slice(self.offsets[k], self.offsets[k + 1])
                J[rows, j] = (self.block(xp, k) - self.block(xm, k)) / width
        return J


def _gauss_newton_gain(A: np.ndarray, g: np.ndarray) -> float:
    """Cost reduction predicted by an undamped Gauss-Newton step."""
    step, *_ = np.linalg.lstsq(A, -g, rcond=None)
    return float(-0.5 * g @ step)


def least_squares(problem: FitProblem, max_iter: int = MAX_ITERATIONS) -> FitResult:
    """Levenberg-Marquardt minimization of the weighted residual norm.

    Damping starts at 1e-3 and is divided by 10 on an accepted step and
    multiplied by 10 on a rejected one. Bounds are enforced by projection.
    """
    obj = _Objective(problem)
    x = obj.x0.copy()
    r = obj.residuals(x)
    cost = 0.5 * float(r @ r)
    initial_cost = cost
    J = obj.jacobian(x)
    lam = INITIAL_DAMPING
    status = "max-iter"
    n_iter = 0

    while n_iter < max_iter:
        n_iter += 1
        if cost == 0:
            status = "converged"
            break
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300))
        try:
            step = np.linalg.solve(A + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            if lam > MAX_DAMPING:
                status = "singular"
                break
            continue

        x_new = np.clip(x + step, obj.lower, obj.upper)
        r_new = obj.residuals(x_new)
        cost_new = 0.5 * float(r_new @ r_new)

        if cost_new < cost:
            relative = (cost - cost_new) / cost
            step_norm = float(np.linalg.norm(x_new - x))
            x, r, cost = x_new, r_new, cost_new
            lam = max(lam / 10.0, 1e-15)
            J = obj.jacobian(x)
            logger.debug("%s iter %d: cost %.6e lambda %.1e", problem.model_id, n_iter, cost, lam)
            small = relative < COST_TOLERANCE or step_norm < STEP_TOLERANCE * (np.linalg.norm(x) + STEP_TOLERANCE)
            if cost == 0:
                status = "converged"
                break
            if small:
                # a tiny accepted step only means convergence if Gauss-Newton also has nothing left
                A = J.T @ J
                g = J.T @ r
                if _gauss_newton_gain(A, g) <= COST_TOLERANCE * cost:
                    status = "converged"
                    break
        else:
            lam *= 10.0
            if lam > MAX_DAMPING:
                # no step lowers the cost; only a minimum at working precision counts as converged
                g = J.T @ r
                pinned = ((x <= obj.lower) & (g > 0)) | ((x >= obj.upper) & (g < 0))
                active = ~pinned
                gain = _gauss_newton_gain((J.T @ J)[np.ix_(active, active)], g[active]) if active.any() else 0.0
                at_floor = cost <= RESOLUTION_GAIN ** 2 * initial_cost
                status = "converged" if gain <= RESOLUTION_GAIN * cost or at_floor else "stalled"
                break

    covariance, singular = _covariance(J)
    if singular:
        status = "singular"
    dof = obj.n_points - x.size
    chi2_red = 2.0 * cost / dof if dof > 0 else math.nan
    if all(s.sigma is None for s in problem.series) and math.isfinite(chi2_red):
        covariance = covariance * chi2_red
    sigma = np.sqrt(np.maximum(np.diag(covariance), 0.0))

    values = obj.values(x)
    sigmas = {name: 0.0 for name in values}
    sigmas.update({name: float(s) for name, s in zip(obj.names, sigma)})
    logger.debug("%s finished: %s after %d iterations, cost %.6e", problem.model_id, status, n_iter, cost)
    return FitResult(
        model_id=problem.model_id,
        values=values,
        sigmas=sigmas,
        fixed=tuple(p.name for p in problem.parameters if p.fixed),
        chi2_red=chi2_red,
        status=status,
        n_iter=n_iter,
        cost=cost,
        covariance=covariance,
    )


def _covariance(J: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Inverse normal matrix, computed on the column-scaled system."""
    A = J.T @ J
    d = np.sqrt(np.diag(A))
    if np.any(d == 0) or not np.all(np.isfinite(A)):
        return np.linalg.pinv(A), True
    scaled = A / np.outer(d, d)
    if np.linalg.cond(scaled) > 1e12:
        return np.linalg.pinv(A), True
    return np.linalg.inv(scaled) / np.outer(d, d), False


def jitter_problem(problem: FitProblem, rng: np.random.Generator, jitter: float) -> FitProblem:
    """Randomly displace the free initial values by +-jitter of their magnitude."""
    values = {}
    for p in problem.parameters:
        if p.fixed:
            continue
        width = jitter * max(abs(p.value), abs(p.scale), FD_RELATIVE_STEP)
        values[p.name] = p.value + rng.uniform(-width, width)
    return problem.with_values(values)


def fit_with_restarts(
    problem: FitProblem,
    seed: int = 0,
    attempts: int = 3,
    jitter: float = 0.1,
    max_iter: int = MAX_ITERATIONS,
) -> FitResult:
    """Run least_squares, restarting from a jittered start while the normal matrix is singular."""
    rng = np.random.default_rng(seed)
    state = {"attempt": 0}

    def attempt() -> FitResult:
        k = state["attempt"]
        state["attempt"] += 1
        if k == 0:
            return least_squares(problem, max_iter)
        logger.debug("%s: singular normal matrix, restart %d from a jittered start", problem.model_id, k)
        return least_squares(jitter_problem(problem, rng, jitter), max_iter)

    retrying = Retrying(
        stop=stop_after_attempt(attempts),
        retry=retry_if_result(lambda result: result.status == "singular"),
        retry_error_callback=lambda retry_state: retry_state.outcome.result(),
        reraise=True,
    )
    return retrying(attempt)


def multistart(
    problem: FitProblem,
    starts: int = 8,
    seed: int = 0,
    jitter: float = 0.2,
    manager: Optional[JobManager] = None,
) -> FitResult:
    """Best of several fits from seeded random starts; the first start is the given one."""
    if starts < 1:
        raise PreconditionError("need at least one start")
    rng = np.random.default_rng(seed)
    problems = [problem] + [jitter_problem(problem, rng, jitter) for _ in range(starts - 1)]
    manager = manager or JobManager()

    def run(indexed):
        k, start = indexed
        try:
            return fit_with_restarts(start, seed=seed + k)
        except ModelEvaluationError as e:
            logger.debug("%s start %d abandoned: %s", problem.model_id, k, e)
            return e

    outcomes = manager.map(run, list(enumerate(problems)), desc=f"{problem.model_id} starts")
    results = [o for o in outcomes if isinstance(o, FitResult)]
    if not results:
        raise outcomes[0]
    ranked = sorted(range(len(results)), key=lambda i: (results[i].status == "singular", results[i].cost, i))
    best = results[ranked[0]]
    logger.debug("%s: best of %d starts has cost %.6e", problem.model_id, len(results), best.cost)
    return best


# Lorentzian resonances


def lorentzian(x, center: float, fwhm: float, depth: float, background: float) -> np.ndarray:
    """B (1 - d (k/2)^2 / ((x - x0)^2 + (k/2)^2)); negative depth gives a peak."""
    half = 0.5 * fwhm
    shape = half * half / ((np.asarray(x, dtype=float) - center) ** 2 + half * half)
    return background * (1.0 - depth * shape)


def lorentzian_jacobian(x, center: float, fwhm: float, depth: float, background: float) -> np.ndarray:
    """Analytic derivatives of lorentzian() w.r.t. (center, fwhm, depth, background)."""
    u = np.asarray(x, dtype=float) - center
    half = 0.5 * fwhm
    den = u * u + half * half
    shape = half * half / den
    d_center = 2.0 * half * half * u / den ** 2
    d_fwhm = half * u * u / den ** 2
    return np.column_stack(
        [
            -background * depth * d_center,
            -background * depth * d_fwhm,
            -background * shape,
            1.0 - depth * shape,
        ]
    )


@dataclass(frozen=True)
class LorentzianFit:
    center: float
    fwhm: float
    depth: float
    background: float
    q: float
    result: FitResult

    @property
    def delta_t(self) -> float:
        """Absolute transmission change at the resonance, B * d."""
        return self.background * self.depth


def _edge_level(y: np.ndarray) -> float:
    n = max(1, y.size // 10)
    return float(np.median(np.concatenate([y[:n], y[-n:]])))


def fit_lorentzian(series: DataSeries, seed: int = 0) -> LorentzianFit:
    """Fit one dominant dip or peak and report Q = center / fwhm."""
    x, y = series.x, series.y
    if x.size < 5:
        raise DetectionError("need at least 5 samples to fit a resonance")
    background = _edge_level(y)
    deviation = y - background
    i = int(np.argmax(np.abs(deviation)))
    amplitude = deviation[i]
    if background == 0 or abs(amplitude) <= 1e-9 * abs(background):
        raise DetectionError("no extremum found: the series is flat")

    above = np.sign(amplitude) * deviation >= 0.5 * abs(amplitude)
    left = i
    while left > 0 and above[left - 1]:
        left -= 1
    right = i
    while right < x.size - 1 and above[right + 1]:
        right += 1
    spacing = float(np.median(np.diff(x)))
    fwhm0 = max(x[right] - x[left], 2.0 * spacing)
    center0 = float(x[i])
    u = x - center0
    span = float(x[-1] - x[0])

    problem = FitProblem(
        model_id="lorentzian",
        series=(DataSeries(u, y, series.sigma),),
        parameters=(
            Parameter("center", 0.0, -span, span, scale=fwhm0),
            Parameter("fwhm", fwhm0, 1e-9 * fwhm0, math.inf, scale=fwhm0),
            Parameter("depth", -amplitude / background, scale=1.0),
            Parameter("background", background, scale=abs(background)),
        ),
        model=lambda v, k: lorentzian(u, v["center"], v["fwhm"], v["depth"], v["background"]),
    )
    result = fit_with_restarts(problem, seed=seed)
    v = result.values
    center = center0 + v["center"]
    fwhm = v["fwhm"]
    return LorentzianFit(
        center=center,
        fwhm=fwhm,
        depth=v["depth"],
        background=v["background"],
        q=abs(center) / fwhm,
        result=result,
    )


# Lifetimes


@dataclass(frozen=True)
class LifetimeModel:
    """Sum of exponential decays after t0 on a constant background."""

    amplitudes: Tuple[float, ...]
    rates: Tuple[float, ...]
    background: float
    t0: float
    result: Optional[FitResult] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.amplitudes) != len(self.rates) or not self.rates:
            raise PreconditionError("need one amplitude per rate")
        if any(r <= 0 for r in self.rates):
            raise PreconditionError(f"rates must be > 0, got {self.rates}")
        if any(a < 0 for a in self.amplitudes):
            raise PreconditionError(f"amplitudes must be >= 0, got {self.amplitudes}")

    def evaluate(self, t) -> np.ndarray:
        dt = np.maximum(np.asarray(t, dtype=float) - self.t0, 0.0)
        total = np.full(dt.shape, float(self.background))
        for a, g in zip(self.amplitudes, self.rates):
            total += a * np.exp(-g * dt)
        return total


def _decay(t, amplitudes, rates, background):
    total = np.full(np.shape(t), float(background))
    for a, g in zip(amplitudes, rates):
        total = total + a * np.exp(-g * t)
    return total


def _log_linear(t: np.ndarray, excess: np.ndarray) -> Optional[Tuple[float, float]]:
    """(amplitude, rate) of a straight line through log(excess), or None."""
    if t.size < 2 or np.any(excess <= 0):
        return None
    slope, intercept = np.polyfit(t, np.log(excess), 1)
    if not np.isfinite(slope) or slope >= 0:
        return None
    return float(np.exp(intercept)), float(-slope)


def fit_lifetime(time, counts, order: str = "single", poisson: bool = True, seed: int = 0) -> LifetimeModel:
    """Fit a single or double exponential decay.

    The time origin is fixed at the count maximum and only later samples are
    fitted. Double fits return rates sorted fast-first.
    """
    if order not in ("single", "double"):
        raise PreconditionError(f"order must be 'single' or 'double', got {order!r}")
    t = np.asarray(time, dtype=float)
    y = np.asarray(counts, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise PreconditionError("time and counts must be equal-length 1-D arrays")
    if np.any(np.diff(t) <= 0):
        raise PreconditionError("time axis must be strictly ascending")
    if np.any(y < 0):
        raise PreconditionError("counts must be >= 0")

    i0 = int(np.argmax(y))
    t0 = float(t[i0])
    tt = t[i0:] - t0
    yy = y[i0:]
    n_exp = 1 if order == "single" else 2
    if tt.size < 2 * n_exp + 3:
        raise PreconditionError(f"too few samples after the peak for a {order} fit")

    tail = max(3, tt.size // 10)
    background0 = max(float(np.median(yy[-tail:])), 0.0)
    excess = yy - background0
    peak = float(excess.max())
    fallback_rate = 5.0 / max(tt[-1], 1e-12)

    if peak <= 0:
        guesses = [(0.0, fallback_rate)] * n_exp
    elif order == "single":
        sel = excess > 0.05 * peak
        guesses = [_log_linear(tt[sel], excess[sel]) or (peak, fallback_rate)]
    else:
        knee = int(np.argmax(excess < 0.05 * peak)) or tt.size // 2
        sel = (np.arange(tt.size) >= knee) & (excess > 1e-3 * peak)
        slow = _log_linear(tt[sel], excess[sel]) or (0.2 * peak, fallback_rate)
        early = excess - slow[0] * np.exp(-slow[1] * tt)
        sel = (np.arange(tt.size) < knee) & (early > 0.05 * max(float(early.max()), 1e-300))
        fast = _log_linear(tt[sel], early[sel]) or (max(peak - slow[0], 0.0), 5.0 * slow[1])
        if fast[1] <= slow[1]:
            fast = (fast[0], 5.0 * slow[1])
        guesses = [fast, slow]

    parameters = []
    for k, (a, g) in enumerate(guesses, start=1):
        parameters.append(Parameter(f"amplitude_{k}", max(a, 0.0), 0.0, math.inf, scale=max(peak, 1.0)))
        parameters.append(Parameter(f"rate_{k}", g, 1e-9, math.inf, scale=g))
    parameters.append(Parameter("background", background0, scale=max(background0, 1.0)))

    def model(v, k):
        amps = [v[f"amplitude_{j}"] for j in range(1, n_exp + 1)]
        rates = [v[f"rate_{j}"] for j in range(1, n_exp + 1)]
        return _decay(tt, amps, rates, v["background"])

    sigma = np.sqrt(np.maximum(yy, 1.0)) if poisson else None
    problem = FitProblem(
        model_id=f"lifetime-{order}",
        series=(DataSeries(tt, yy, sigma),),
        parameters=tuple(parameters),
        model=model,
    )
    result = fit_with_restarts(problem, seed=seed)
    v = result.values
    pairs = sorted(
        ((v[f"amplitude_{j}"], v[f"rate_{j}"]) for j in range(1, n_exp + 1)),
        key=lambda pair: -pair[1],
    )
    amplitudes = tuple(a for a, _ in pairs)
    rates = tuple(g for _, g in pairs)

    if max(amplitudes) <= 1e-3 * max(abs(v["background"]), 1.0) or result.status == "singular":
        warnings.warn("decay amplitude is ~0; the rate is not identifiable", DegeneracyWarning, stacklevel=2)
    elif order == "double":
        ratio = rates[0] / rates[1]
        if ratio < 1.5 or min(amplitudes) <= 1e-3 * max(amplitudes):
            warnings.warn(
                f"double-exponential components are degenerate (rate ratio {ratio:.3g}); a single exponential suffices",
                DegeneracyWarning,
                stacklevel=2,
            )
    return LifetimeModel(amplitudes=amplitudes, rates=rates, background=v["background"], t0=t0, result=result)


# Simultaneous multi-power spectra

SHARED_PARAMETERS = ("qd_offset", "delta", "kappa_ghz", "sigma_sd")


@dataclass(frozen=True)
class PowerSeries:
    """Drop and/or bus spectra at one excitation power.

    ``freq`` is the absolute laser frequency (GHz) in the frame of
    omega_qd and omega_cav.
    """

    power_uw: float
    freq: np.ndarray
    drop: Optional[np.ndarray] = None
    bus: Optional[np.ndarray] = None
    drop_sigma: Optional[np.ndarray] = None
    bus_sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        freq = np.array(self.freq, dtype=float, ndmin=1)
        if np.any(np.diff(freq) <= 0):
            raise PreconditionError("frequency axis must be strictly ascending")
        object.__setattr__(self, "freq", freq)
        if self.drop is None and self.bus is None:
            raise PreconditionError("power series needs a drop or bus spectrum")
        for name in ("drop", "bus"):
            values = getattr(self, name)
            if values is not None:
                values = np.array(values, dtype=float, ndmin=1)
                if values.shape != freq.shape:
                    raise PreconditionError(f"{name} spectrum length differs from the frequency axis")
                object.__setattr__(self, name, values)


@dataclass(frozen=True)
class MultipowerFit:
    """Shared physics parameters and per-power saturation and drop scale."""

    params: SystemParams
    powers: Tuple[float, ...]
    saturations: Tuple[float, ...]
    etas: Tuple[float, ...]
    result: FitResult

    def low_power_extinction(self, axis: Optional[np.ndarray] = None) -> float:
        """Broadened drop-port extinction of the fitted system at S = 0."""
        p = self.params.updated(eta=1.0)
        return routing_metrics(default_dip_axis(p) if axis is None else axis, 0.0, p).drop_extinction


def _is_fixed(name: str, fixed: Sequence[str]) -> bool:
    if name in fixed:
        return True
    prefix = name.split("_")[0]
    return prefix in ("S", "eta") and prefix in fixed


def fit_multipower(
    series: Sequence[PowerSeries],
    p0: SystemParams,
    saturations: Optional[Sequence[float]] = None,
    etas: Optional[Sequence[float]] = None,
    fixed: Sequence[str] = (),
    starts: int = 8,
    seed: int = 0,
    mode: str = "convolution",
    manager: Optional[JobManager] = None,
) -> MultipowerFit:
    """Fit all power series at once with shared detunings, linewidth and spectral diffusion.

    Every power has its own saturation S_i (uniform across the spectrum) and
    drop-port scale eta_i. Names in ``fixed`` are held at their initial
    values; "S" or "eta" fixes the whole per-power family.
    """
    series = list(series)
    if not series:
        raise PreconditionError("need at least one power series")
    fixed = tuple(fixed)
    if len(series) < 2 and not all(name in fixed for name in SHARED_PARAMETERS):
        raise PreconditionError("a single power series only determines S; fix the shared parameters")
    powers = [s.power_uw for s in series]
    if len(set(powers)) < len(powers):
        warnings.warn("identical excitation powers: their saturations are degenerate", RouterkitWarning, stacklevel=2)

    n = len(series)
    if saturations is None:
        reference = float(np.median(powers)) if np.median(powers) > 0 else 1.0
        saturations = [max(pw / reference, 0.0) for pw in powers]
    if etas is None:
        etas = [p0.cavity.eta] * n
    if len(saturations) != n or len(etas) != n:
        raise PreconditionError("need one initial S and eta per power series")

    kappa0 = linewidth_from_rate(p0.cavity.kappa)
    parameters = [
        Parameter("qd_offset", 0.0, fixed=_is_fixed("qd_offset", fixed), scale=1.0),
        Parameter("delta", p0.delta, fixed=_is_fixed("delta", fixed), scale=1.0),
        Parameter("kappa_ghz", kappa0, 1e-6, math.inf, fixed=_is_fixed("kappa_ghz", fixed), scale=kappa0),
        Parameter("sigma_sd", p0.sigma_sd, 0.0, math.inf, fixed=_is_fixed("sigma_sd", fixed), scale=max(p0.sigma_sd, 0.1)),
    ]
    layout: List[Tuple[str, int]] = []
    sharing: Dict[str, Tuple[int, ...]] = {}
    for i, s in enumerate(series):
        indices = []
        for port in ("drop", "bus"):
            if getattr(s, port) is not None:
                indices.append(len(layout))
                layout.append((port, i))
        parameters.append(Parameter(f"S_{i}", float(saturations[i]), 0.0, math.inf, fixed=_is_fixed(f"S_{i}", fixed), scale=1.0))
        parameters.append(Parameter(f"eta_{i}", float(etas[i]), 0.0, math.inf, fixed=_is_fixed(f"eta_{i}", fixed), scale=max(etas[i], 1e-3)))
        sharing[f"S_{i}"] = tuple(indices)
        sharing[f"eta_{i}"] = tuple(k for k in indices if layout[k][0] == "drop")
    sharing = {k: v for k, v in sharing.items() if v}
    unknown = sorted(set(fixed) - {p.name for p in parameters} - {"S", "eta"})
    if unknown:
        raise PreconditionError(f"cannot fix unknown parameters {unknown}")

    data = []
    for port, i in layout:
        s = series[i]
        data.append(DataSeries(s.freq, getattr(s, port), getattr(s, f"{port}_sigma")))

    def system_for(values: Dict[str, float], i: int) -> SystemParams:
        omega_qd = p0.emitter.omega_qd + values["qd_offset"]
        return p0.updated(
            omega_qd=omega_qd,
            omega_cav=omega_qd - values["delta"],
            kappa=TWO_PI * values["kappa_ghz"],
            sigma_sd=values["sigma_sd"],
            eta=values[f"eta_{i}"],
        )

    @lru_cache(maxsize=256)
    def ports(i: int, key: Tuple[Tuple[str, float], ...]):
        values = dict(key)
        p = system_for(values, i)
        drop, bus = broadened_spectrum(series[i].freq - p.emitter.omega_qd, values[f"S_{i}"], p, mode=mode)
        return drop.values, bus.values

    def model(values: Dict[str, float], k: int) -> np.ndarray:
        port, i = layout[k]
        key = tuple((name, values[name]) for name in SHARED_PARAMETERS + (f"S_{i}", f"eta_{i}"))
        drop, bus = ports(i, key)
        return drop if port == "drop" else bus

    problem = FitProblem(
        model_id="multipower",
        series=tuple(data),
        parameters=tuple(parameters),
        model=model,
        sharing=sharing,
    )
    result = multistart(problem, starts=starts, seed=seed, manager=manager)
    v = result.values
    params = system_for(v, 0).updated(eta=1.0)
    return MultipowerFit(
        params=params,
        powers=tuple(powers),
        saturations=tuple(v[f"S_{i}"] for i in range(n)),
        etas=tuple(v[f"eta_{i}"] for i in range(n)),
        result=result,
    )


# Neighbouring cavity mode


@dataclass(frozen=True)
class SecondCavityResult:
    """Series with the neighbour mode removed, plus the neighbour Lorentzian."""

    cleaned: DataSeries
    neighbor_center: float
    neighbor_fwhm: float
    neighbor_amplitude: float
    passthrough: bool
    result: Optional[FitResult] = field(default=None, repr=False)


def peak_lorentzian(x, center: float, fwhm: float) -> np.ndarray:
    half = 0.5 * fwhm
    return half * half / ((np.asarray(x, dtype=float) - center) ** 2 + half * half)


def _window_mask(x: np.ndarray, window: Tuple[float, float], name: str) -> np.ndarray:
    lo, hi = window
    if not lo < hi:
        raise PreconditionError(f"window {name} must satisfy lo < hi, got {window}")
    mask = (x >= lo) & (x <= hi)
    if mask.sum() < 5:
        raise PreconditionError(f"window {name} holds fewer than 5 samples")
    return mask


def subtract_second_cavity(
    series: DataSeries,
    window_a: Tuple[float, float],
    window_b: Tuple[float, float],
    normalize: bool = True,
    seed: int = 0,
) -> SecondCavityResult:
    """Remove the neighbour mode in window_b from a spectrum whose primary mode sits in window_a.

    Both modes and a flat background are fitted on the union of the windows;
    the neighbour Lorentzian is then subtracted across the whole axis and,
    unless ``normalize`` is off, the result is divided by the primary peak
    level B + A1.
    """
    if not (window_a[1] < window_b[0] or window_b[1] < window_a[0]):
        raise PreconditionError(f"windows {window_a} and {window_b} overlap")
    x, y = series.x, series.y
    mask_a = _window_mask(x, window_a, "a")
    mask_b = _window_mask(x, window_b, "b")

    def passthrough(flagged: bool, result=None) -> SecondCavityResult:
        return SecondCavityResult(
            cleaned=DataSeries(x.copy(), y.copy(), series.sigma),
            neighbor_center=math.nan,
            neighbor_fwhm=math.nan,
            neighbor_amplitude=0.0,
            passthrough=flagged,
            result=result,
        )

    try:
        neighbor = fit_lorentzian(DataSeries(x[mask_b], y[mask_b]), seed=seed)
    except DetectionError:
        logger.debug("No neighbour mode in window %s; series left unchanged", window_b)
        return passthrough(False)
    primary = fit_lorentzian(DataSeries(x[mask_a], y[mask_a]), seed=seed)

    union = mask_a | mask_b
    origin = float(np.mean(x[union]))
    u = x[union] - origin
    sigma = series.sigma[union] if series.sigma is not None else None
    background = 0.5 * (primary.background + neighbor.background)

    def model(v, k):
        return (
            v["background"]
            + v["amplitude_a"] * peak_lorentzian(u, v["center_a"], v["fwhm_a"])
            + v["amplitude_b"] * peak_lorentzian(u, v["center_b"], v["fwhm_b"])
        )

    problem = FitProblem(
        model_id="second-cavity",
        series=(DataSeries(u, y[union], sigma),),
        parameters=(
            Parameter("background", background, scale=max(abs(background), 1e-12)),
            Parameter("amplitude_a", -primary.delta_t, scale=abs(primary.delta_t)),
            Parameter("center_a", primary.center - origin, scale=primary.fwhm),
            Parameter("fwhm_a", primary.fwhm, 1e-9 * primary.fwhm, math.inf, scale=primary.fwhm),
            Parameter("amplitude_b", -neighbor.delta_t, scale=abs(neighbor.delta_t)),
            Parameter("center_b", neighbor.center - origin, scale=neighbor.fwhm),
            Parameter("fwhm_b", neighbor.fwhm, 1e-9 * neighbor.fwhm, math.inf, scale=neighbor.fwhm),
        ),
        model=model,
    )
    try:
        result = fit_with_restarts(problem, seed=seed)
    except ModelEvaluationError as e:
        warnings.warn(f"neighbour-mode fit failed ({e}); series left unchanged", RouterkitWarning, stacklevel=2)
        return passthrough(True)
    if not result.converged:
        warnings.warn(
            f"neighbour-mode fit ended with status {result.status!r}; series left unchanged",
            RouterkitWarning,
            stacklevel=2,
        )
        return passthrough(True, result)

    v = result.values
    center_b = v["center_b"] + origin
    cleaned = y - v["amplitude_b"] * peak_lorentzian(x, center_b, v["fwhm_b"])
    sigma_out = series.sigma
    if normalize:
        level = v["background"] + v["amplitude_a"]
        cleaned = cleaned / level
        sigma_out = None if series.sigma is None else series.sigma / abs(level)
    return SecondCavityResult(
        cleaned=DataSeries(x.copy(), cleaned, sigma_out),
        neighbor_center=center_b,
        neighbor_fwhm=v["fwhm_b"],
        neighbor_amplitude=v["amplitude_b"],
        passthrough=False,
        result=result,
    )
