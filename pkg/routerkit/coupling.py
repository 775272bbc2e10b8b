"""Loaded-resonator coupling versus waveguide-disk gap."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, PreconditionError, RankError
from .fitkit import DataSeries, FitProblem, FitResult, Parameter, fit_with_restarts
from .manager import JobManager

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("t_cc", "q_int", "kappa_g0", "xi")


@dataclass(frozen=True)
class CouplingModel:
    """Critical-coupling transmission, intrinsic Q, coupling prefactor and decay length (1/nm)."""

    t_cc: float
    q_int: float
    kappa_g0: float
    xi: float

    def __post_init__(self):
        if not 0 <= self.t_cc <= 1:
            raise DomainError(f"t_cc must lie in [0, 1], got {self.t_cc}")
        for name in ("q_int", "kappa_g0", "xi"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be > 0, got {value}")


def _gaps(gap):
    gap = np.asarray(gap, dtype=float)
    if np.any(gap < 0) or np.any(np.isnan(gap)):
        raise DomainError(f"gap must be >= 0 nm, got {gap}")
    return gap


def _out(values):
    return float(values) if np.ndim(values) == 0 else values


def kappa_g(m: CouplingModel, gap):
    """kappa_g0 exp(-xi gap)."""
    return _out(m.kappa_g0 * np.exp(-m.xi * _gaps(gap)))


def _delta_t(t_cc, kg):
    return 1.0 - (t_cc + (1.0 - t_cc) * ((1.0 - kg) / (1.0 + kg)) ** 2)


def delta_t(m: CouplingModel, gap):
    """Transmission dip depth 1 - [T_cc + (1 - T_cc)((1 - k)/(1 + k))^2]."""
    return _out(_delta_t(m.t_cc, np.asarray(kappa_g(m, gap))))


def loaded_q(m: CouplingModel, gap):
    """Q_int / (1 + kappa_g)."""
    return _out(m.q_int / (1.0 + np.asarray(kappa_g(m, gap))))


def critical_gap(m: CouplingModel) -> Optional[float]:
    """Gap where kappa_g = 1, or None when kappa_g0 <= 1 (critical coupling not reached)."""
    if m.kappa_g0 <= 1:
        return None
    return math.log(m.kappa_g0) / m.xi


@dataclass(frozen=True)
class GapSeries:
    """Per-structure dip depth and loaded Q against gap width (nm)."""

    gap: np.ndarray
    delta_t: np.ndarray
    q: np.ndarray
    delta_t_err: Optional[np.ndarray] = None
    q_err: Optional[np.ndarray] = None
    mode_order: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        gap = np.array(self.gap, dtype=float, ndmin=1)
        dt = np.array(self.delta_t, dtype=float, ndmin=1)
        q = np.array(self.q, dtype=float, ndmin=1)
        if not (gap.shape == dt.shape == q.shape):
            raise PreconditionError("gap, delta_t and q columns differ in length")
        if np.any(gap <= 0):
            raise PreconditionError("gaps must be > 0 nm")
        if np.any(dt < 0) or np.any(dt > 1):
            raise PreconditionError("delta_t must lie in [0, 1]")
        if np.any(q <= 0):
            raise PreconditionError("Q must be > 0")
        object.__setattr__(self, "gap", gap)
        object.__setattr__(self, "delta_t", dt)
        object.__setattr__(self, "q", q)
        for name in ("delta_t_err", "q_err"):
            err = getattr(self, name)
            if err is not None:
                err = np.array(err, dtype=float, ndmin=1)
                if err.shape != gap.shape or np.any(err <= 0):
                    raise PreconditionError(f"{name} must be positive with one entry per gap")
                object.__setattr__(self, name, err)
        if self.mode_order is not None:
            order = tuple(str(o) for o in self.mode_order)
            if len(order) != gap.size:
                raise PreconditionError("mode_order needs one label per gap")
            object.__setattr__(self, "mode_order", order)
        labels = self.mode_order or ("",) * gap.size
        pairs = list(zip(labels, gap))
        if len(set(pairs)) != len(pairs):
            raise PreconditionError("gaps must be distinct within each mode order")

    def select_order(self, order: str) -> "GapSeries":
        if self.mode_order is None:
            raise PreconditionError("series carries no mode-order labels")
        keep = np.array([o == order for o in self.mode_order])
        if not keep.any():
            raise PreconditionError(f"no entries with mode order {order!r}")
        pick = lambda a: None if a is None else a[keep]
        return GapSeries(
            gap=self.gap[keep],
            delta_t=self.delta_t[keep],
            q=self.q[keep],
            delta_t_err=pick(self.delta_t_err),
            q_err=pick(self.q_err),
            mode_order=tuple(o for o in self.mode_order if o == order),
        )


def synthesize_gap_series(
    m: CouplingModel,
    gaps: Sequence[float],
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> GapSeries:
    """Model values at the given gaps with optional relative Gaussian noise."""
    gaps = np.asarray(gaps, dtype=float)
    dt = np.asarray(delta_t(m, gaps), dtype=float)
    q = np.asarray(loaded_q(m, gaps), dtype=float)
    if noise > 0:
        rng = rng or np.random.default_rng()
        dt = np.clip(dt * (1.0 + noise * rng.standard_normal(dt.shape)), 0.0, 1.0)
        q = q * (1.0 + noise * rng.standard_normal(q.shape))
    return GapSeries(gap=gaps, delta_t=dt, q=q)


@dataclass(frozen=True)
class GapFit:
    model: CouplingModel
    covariance: np.ndarray = field(repr=False)
    critical_gap: Optional[float]
    result: FitResult = field(repr=False)

    @property
    def critical_gap_label(self) -> str:
        return "not reached" if self.critical_gap is None else f"{self.critical_gap:.6g}"


def _spread(values: np.ndarray) -> float:
    s = float(np.std(values))
    return s if s > 0 else max(float(np.max(np.abs(values))), 1.0)


def fit_gap_series(
    data: GapSeries,
    init: CouplingModel,
    mode_order: Optional[str] = None,
    fixed: Sequence[str] = (),
    seed: int = 0,
) -> GapFit:
    """Joint weighted fit of the dip-depth and loaded-Q series.

    Residuals use the reported error bars when present and otherwise the
    spread of each series, so neither series dominates.
    """
    unknown = sorted(set(fixed) - set(PARAMETER_NAMES))
    if unknown:
        raise PreconditionError(f"cannot fix unknown parameters {unknown}; choose from {list(PARAMETER_NAMES)}")
    if mode_order is not None:
        data = data.select_order(mode_order)
    free = [name for name in PARAMETER_NAMES if name not in fixed]
    distinct = np.unique(data.gap).size
    if distinct < len(free):
        raise RankError(f"{distinct} distinct gaps cannot determine {len(free)} free parameters")

    dt_sigma = data.delta_t_err if data.delta_t_err is not None else np.full(data.gap.shape, _spread(data.delta_t))
    q_sigma = data.q_err if data.q_err is not None else np.full(data.gap.shape, _spread(data.q))
    gap = data.gap

    def model(v, k):
        kg = v["kappa_g0"] * np.exp(-v["xi"] * gap)
        if k == 0:
            return _delta_t(v["t_cc"], kg)
        return v["q_int"] / (1.0 + kg)

    problem = FitProblem(
        model_id="gap-series",
        series=(DataSeries(gap, data.delta_t, dt_sigma), DataSeries(gap, data.q, q_sigma)),
        parameters=(
            Parameter("t_cc", init.t_cc, 0.0, 1.0, fixed="t_cc" in fixed, scale=0.1),
            Parameter("q_int", init.q_int, 1.0, math.inf, fixed="q_int" in fixed, scale=init.q_int),
            Parameter("kappa_g0", init.kappa_g0, 1e-9, math.inf, fixed="kappa_g0" in fixed, scale=init.kappa_g0),
            Parameter("xi", init.xi, 1e-9, math.inf, fixed="xi" in fixed, scale=init.xi),
        ),
        model=model,
        sharing={"t_cc": (0,), "q_int": (1,)},
    )
    result = fit_with_restarts(problem, seed=seed)
    v = result.values
    fitted = CouplingModel(t_cc=v["t_cc"], q_int=v["q_int"], kappa_g0=v["kappa_g0"], xi=v["xi"])
    g_star = critical_gap(fitted)
    logger.debug("Gap fit %s: g* = %s", result.status, g_star)
    return GapFit(model=fitted, covariance=result.covariance, critical_gap=g_star, result=result)


def monte_carlo_recovery(
    truth: CouplingModel,
    gaps: Sequence[float],
    init: CouplingModel,
    noise: float = 0.05,
    trials: int = 100,
    seed: int = 0,
    manager: Optional[JobManager] = None,
) -> np.ndarray:
    """Refit noisy synthetic series; rows are (q_int, critical gap or nan) per trial."""
    manager = manager or JobManager()
    seeds = np.random.SeedSequence(seed).spawn(trials)

    def trial(seq: np.random.SeedSequence):
        rng = np.random.default_rng(seq)
        data = synthesize_gap_series(truth, gaps, noise, rng)
        fit = fit_gap_series(data, init)
        g_star = fit.critical_gap if fit.critical_gap is not None else math.nan
        return fit.model.q_int, g_star

    return np.array(manager.map(trial, seeds, desc="gap trials"))
