"""Spectral-diffusion broadening and routing metrics.

The emitter line wanders with a Gaussian distribution of width sigma_sd
(ordinary GHz). The default treatment convolves the port intensities along the
laser-detuning axis with that Gaussian; the ensemble mode instead averages
spectra over shifted emitter frequencies with the cavity held fixed.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .core_model import TWO_PI, DriveParams, SystemParams, emitter_decoherence
from .errors import AxisTooCoarseError, DomainError, PreconditionError, RouterkitWarning
from .scattering import Drive, RealSpectrum, bare_spectrum, spectrum

logger = logging.getLogger(__name__)

KERNEL_TRUNCATION = 5.0
# fine-grid points per sigma used by broadened_spectrum
POINTS_PER_SIGMA = 8


@dataclass(frozen=True)
class GaussianKernel:
    """Discrete unit-mass Gaussian on integer multiples of a grid step."""

    sigma: float
    center: float
    offsets: np.ndarray
    weights: np.ndarray

    @property
    def steps(self) -> np.ndarray:
        step = self.offsets[1] - self.offsets[0] if self.offsets.size > 1 else 1.0
        return np.rint(self.offsets / step).astype(int)


def gaussian_kernel(sigma: float, spacing: float, center: float = 0.0) -> GaussianKernel:
    """Gaussian of width sigma sampled at multiples of spacing, truncated at +-5 sigma.

    Samples carry trapezoid weights and the result is renormalized to unit mass.
    """
    if sigma <= 0 or spacing <= 0:
        raise DomainError("kernel width and spacing must be > 0")
    lo = int(math.floor((center - KERNEL_TRUNCATION * sigma) / spacing))
    hi = int(math.ceil((center + KERNEL_TRUNCATION * sigma) / spacing))
    offsets = spacing * np.arange(lo, hi + 1)
    weights = np.exp(-0.5 * ((offsets - center) / sigma) ** 2)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    weights /= weights.sum()
    return GaussianKernel(sigma=sigma, center=center, offsets=offsets, weights=weights)


def _check_sigma(sigma_sd: float):
    if not math.isfinite(sigma_sd) or sigma_sd < 0:
        raise DomainError(f"sigma_sd must be finite and >= 0, got {sigma_sd}")


def convolve_spectrum(raw: RealSpectrum, sigma_sd: float, delta: float = 0.0) -> RealSpectrum:
    """Convolve an intensity spectrum with a unit-mass Gaussian of width sigma_sd.

    ``delta`` shifts the kernel mean. The axis must be uniform and fine enough
    that the spacing does not exceed sigma/4; widths below a quarter of the
    spacing return the input unchanged with a warning.
    """
    _check_sigma(sigma_sd)
    if sigma_sd == 0 or raw.axis.size < 2:
        return RealSpectrum(raw.axis.copy(), raw.values.copy())
    if not raw.is_uniform():
        raise PreconditionError("convolve_spectrum needs a uniform axis; resample first")
    h = raw.spacing
    if sigma_sd < h / 4:
        warnings.warn(
            f"sigma_sd={sigma_sd:g} GHz is below a quarter of the grid spacing {h:g} GHz; spectrum left unbroadened",
            RouterkitWarning,
            stacklevel=2,
        )
        return RealSpectrum(raw.axis.copy(), raw.values.copy())
    if h > sigma_sd / 4:
        raise AxisTooCoarseError(f"grid spacing {h:g} GHz exceeds sigma_sd/4 = {sigma_sd / 4:g} GHz")

    kernel = gaussian_kernel(sigma_sd, h, delta)
    steps = kernel.steps
    pad = int(np.max(np.abs(steps)))
    n = raw.values.size
    padded = np.pad(raw.values, pad, mode="edge")
    out = np.zeros(n)
    for k, w in zip(steps, kernel.weights):
        out += w * padded[pad - k:pad - k + n]
    return RealSpectrum(raw.axis.copy(), out)


@dataclass(frozen=True)
class SdModel:
    """Linear spectral-diffusion model sigma_sd = slope * delta + intercept (GHz)."""

    slope: float
    intercept: float


def sd_at_detuning(m: SdModel, delta):
    """Spectral diffusion at emitter-cavity detuning delta, clamped at zero."""
    value = np.maximum(0.0, m.slope * np.asarray(delta, dtype=float) + m.intercept)
    return float(value) if value.ndim == 0 else value


def fit_sd_model(deltas: Sequence[float], sigmas: Sequence[float]) -> SdModel:
    """Least-squares line through measured (delta, sigma_sd) pairs."""
    deltas = np.asarray(deltas, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if deltas.shape != sigmas.shape:
        raise PreconditionError("delta and sigma arrays differ in length")
    if np.unique(deltas).size < 2:
        raise PreconditionError("need at least two distinct detunings for a linear model")
    slope, intercept = np.polyfit(deltas, sigmas, 1)
    return SdModel(slope=float(slope), intercept=float(intercept))


def _fine_grid(axis: np.ndarray, sigma: float, center: float):
    """Uniform grid containing every axis point, padded by the kernel reach.

    Returns the grid and the indices of the axis points in it, or None for
    the indices when the axis is not uniform.
    """
    reach = KERNEL_TRUNCATION * sigma + abs(center)
    if axis.size >= 2:
        steps = np.diff(axis)
        uniform = np.allclose(steps, steps.mean(), rtol=1e-9, atol=1e-12)
        h = float(steps.mean()) if uniform else float(steps.min())
    else:
        uniform = True
        h = sigma
    if uniform:
        m = max(1, int(math.ceil(POINTS_PER_SIGMA * h / sigma)))
        hf = h / m
        pad = int(math.ceil(reach / hf)) + 1
        n_fine = (axis.size - 1) * m + 2 * pad + 1
        grid = axis[0] + hf * (np.arange(n_fine) - pad)
        index = pad + m * np.arange(axis.size)
        return grid, index
    hf = min(h, sigma / POINTS_PER_SIGMA)
    pad = int(math.ceil(reach / hf)) + 1
    n_fine = int(math.ceil((axis[-1] - axis[0]) / hf)) + 2 * pad + 1
    grid = axis[0] + hf * (np.arange(n_fine) - pad)
    return grid, None


def _convolved(axis: np.ndarray, drive: Drive, p: SystemParams, ideal_limit: bool) -> Tuple[RealSpectrum, RealSpectrum]:
    sigma = p.sigma_sd
    grid, index = _fine_grid(axis, sigma, 0.0)
    drop, bus = spectrum(grid, drive, p, ideal_limit)
    drop = convolve_spectrum(drop, sigma)
    bus = convolve_spectrum(bus, sigma)
    if index is not None:
        return RealSpectrum(axis, drop.values[index]), RealSpectrum(axis, bus.values[index])
    return (
        RealSpectrum(axis, np.interp(axis, grid, drop.values)),
        RealSpectrum(axis, np.interp(axis, grid, bus.values)),
    )


def _ensemble(axis: np.ndarray, drive: Drive, p: SystemParams, ideal_limit: bool) -> Tuple[RealSpectrum, RealSpectrum]:
    """Average over emitter shifts eps: the laser-emitter detuning becomes axis - eps."""
    sigma = p.sigma_sd
    kernel = gaussian_kernel(sigma, sigma / POINTS_PER_SIGMA)
    drop = np.zeros(axis.size)
    bus = np.zeros(axis.size)
    for eps, w in zip(kernel.offsets, kernel.weights):
        shifted = p.updated(omega_qd=p.emitter.omega_qd + eps)
        d, b = spectrum(axis - eps, drive, shifted, ideal_limit)
        drop += w * d.values
        bus += w * b.values
    return RealSpectrum(axis, drop), RealSpectrum(axis, bus)


def broadened_spectrum(
    axis,
    drive: Drive,
    p: SystemParams,
    mode: str = "convolution",
    ideal_limit: bool = False,
) -> Tuple[RealSpectrum, RealSpectrum]:
    """Port intensities including spectral diffusion of width p.sigma_sd.

    ``drive`` is a saturation S or a DriveParams. In convolution mode the
    spectrum is evaluated on an internal uniform grid that contains the
    requested axis points, so no interpolation enters a uniform axis.
    """
    if mode not in ("convolution", "ensemble"):
        raise DomainError(f"unknown broadening mode {mode!r}")
    axis = np.array(axis, dtype=float, ndmin=1)
    if isinstance(drive, np.ndarray) and drive.ndim > 0:
        raise PreconditionError("broadened_spectrum takes a scalar saturation or a DriveParams")
    sigma = p.sigma_sd
    if sigma == 0:
        return spectrum(axis, drive, p, ideal_limit)
    if axis.size >= 2:
        h = float(np.min(np.diff(axis)))
        if sigma < h / 4:
            warnings.warn(
                f"sigma_sd={sigma:g} GHz is below a quarter of the axis spacing {h:g} GHz; spectrum left unbroadened",
                RouterkitWarning,
                stacklevel=2,
            )
            return spectrum(axis, drive, p, ideal_limit)
    if mode == "ensemble":
        return _ensemble(axis, drive, p, ideal_limit)
    return _convolved(axis, drive, p, ideal_limit)


@dataclass(frozen=True)
class ModeComparison:
    """Difference between the convolution and ensemble treatments."""

    max_abs_drop: float
    max_abs_bus: float
    extinction_convolution: float
    extinction_ensemble: float


def mode_difference(axis, drive: Drive, p: SystemParams) -> ModeComparison:
    """Report how far the two broadening treatments differ on an axis."""
    conv = broadened_spectrum(axis, drive, p, mode="convolution")
    ens = broadened_spectrum(axis, drive, p, mode="ensemble")
    bare_drop, _ = bare_spectrum(axis, p)
    ratio_conv = conv[0].values / bare_drop.values
    ratio_ens = ens[0].values / bare_drop.values
    comparison = ModeComparison(
        max_abs_drop=float(np.max(np.abs(conv[0].values - ens[0].values))),
        max_abs_bus=float(np.max(np.abs(conv[1].values - ens[1].values))),
        extinction_convolution=float(np.min(ratio_conv) - 1.0),
        extinction_ensemble=float(np.min(ratio_ens) - 1.0),
    )
    logger.debug("Broadening mode difference: %s", comparison)
    return comparison


@dataclass(frozen=True)
class RoutingMetrics:
    """Drop-port extinction relative to the bare cavity and absolute bus-port gain."""

    drop_extinction: float
    bus_gain: float
    dip_detuning: float


def default_dip_axis(p: SystemParams, spacing: float = 0.01) -> np.ndarray:
    """Uniform detuning grid centered on the emitter that covers the broadened dip."""
    linewidth = (p.gamma_cav + emitter_decoherence(p)) / TWO_PI
    half = 5.0 * (p.sigma_sd + linewidth)
    n = int(math.ceil(half / spacing))
    return spacing * np.arange(-n, n + 1)


def routing_metrics(
    axis,
    drive: Drive,
    p: SystemParams,
    mode: str = "convolution",
    ideal_limit: bool = False,
) -> RoutingMetrics:
    """Extinction at the minimum of T_drop / T_drop,bare and the peak bus gain.

    The bare reference is the cavity with a saturated emitter; it is not
    broadened because spectral diffusion acts on the emitter only.
    """
    axis = np.array(axis, dtype=float, ndmin=1)
    drop, bus = broadened_spectrum(axis, drive, p, mode=mode, ideal_limit=ideal_limit)
    bare_drop, bare_bus = bare_spectrum(axis, p)
    ratio = drop.values / bare_drop.values
    i = int(np.argmin(ratio))
    return RoutingMetrics(
        drop_extinction=float(ratio[i] - 1.0),
        bus_gain=float(np.max(bus.values - bare_bus.values)),
        dip_detuning=float(axis[i]),
    )


@dataclass(frozen=True)
class SaturationCurve:
    """Routing metrics as a function of incident photons per lifetime."""

    n_in: np.ndarray
    drop_extinction: np.ndarray
    bus_gain: np.ndarray


def waveguide_reference(p: SystemParams) -> SystemParams:
    """The same emitter in a bare waveguide: guided emission at the bulk rate, no enhancement."""
    return p.updated(gamma_cav=p.emitter.gamma_bulk)


def saturation_curve(
    n_in_values: Sequence[float],
    p: SystemParams,
    axis: Optional[np.ndarray] = None,
    mode: str = "convolution",
    waveguide: bool = False,
) -> SaturationCurve:
    """Sweep the incident flux and record the broadened routing metrics.

    With ``waveguide`` the sweep runs on :func:`waveguide_reference` instead.
    """
    n_in_values = np.asarray(n_in_values, dtype=float)
    if waveguide:
        p = waveguide_reference(p)
    if axis is None:
        axis = default_dip_axis(p)
    metrics = [routing_metrics(axis, DriveParams.flux(n), p, mode=mode) for n in n_in_values]
    return SaturationCurve(
        n_in=n_in_values,
        drop_extinction=np.array([m.drop_extinction for m in metrics]),
        bus_gain=np.array([m.bus_gain for m in metrics]),
    )


def effective_critical_photon_number(
    p: SystemParams,
    axis: Optional[np.ndarray] = None,
    mode: str = "convolution",
    xtol: float = 1e-4,
) -> float:
    """Incident flux at which the broadened dip reaches half its zero-power depth."""
    if axis is None:
        axis = default_dip_axis(p)

    def depth(n_in: float) -> float:
        return routing_metrics(axis, DriveParams.flux(n_in), p, mode=mode).drop_extinction

    target = 0.5 * depth(0.0)
    if target == 0:
        raise DomainError("no dip at zero power; the emitter does not route")
    hi = 1.0
    while depth(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise DomainError("dip does not saturate within 1e6 photons per lifetime")
    n_half = brentq(lambda n: depth(n) - target, 0.0, hi, xtol=xtol)
    logger.debug("Broadened critical photon number %.4f (half depth %.4f)", n_half, target)
    return float(n_half)


@dataclass(frozen=True)
class DetuningSweep:
    """Port changes with the laser parked on the cavity while delta is tuned."""

    delta: np.ndarray
    sigma_sd: np.ndarray
    drop_change: np.ndarray
    bus_change: np.ndarray


def detuning_sweep(
    deltas: Sequence[float],
    drive: Drive,
    p: SystemParams,
    sd_model: Optional[SdModel] = None,
    mode: str = "convolution",
) -> DetuningSweep:
    """Tune the emitter through the cavity with the laser fixed at omega_cav.

    The laser-emitter detuning is then -delta. Drop changes are relative to
    the bare cavity; bus changes are absolute fractions of the input.
    """
    deltas = np.asarray(deltas, dtype=float)
    sigmas = np.empty_like(deltas)
    drop_change = np.empty_like(deltas)
    bus_change = np.empty_like(deltas)
    for i, delta in enumerate(deltas):
        sigma = sd_at_detuning(sd_model, delta) if sd_model is not None else p.sigma_sd
        point = p.updated(omega_qd=p.cavity.omega_cav + delta, sigma_sd=sigma)
        drop, bus = broadened_spectrum([-delta], drive, point, mode=mode)
        bare_drop, bare_bus = bare_spectrum([-delta], point)
        sigmas[i] = sigma
        drop_change[i] = drop.values[0] / bare_drop.values[0] - 1.0
        bus_change[i] = bus.values[0] - bare_bus.values[0]
    return DetuningSweep(delta=deltas, sigma_sd=sigmas, drop_change=drop_change, bus_change=bus_change)
