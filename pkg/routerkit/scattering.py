"""Steady-state scattering of a laser by the emitter-cavity-waveguide system.

The laser detuning axis is delta_omega = omega_laser - omega_qd in ordinary
GHz, so delta_omega + delta = omega_laser - omega_cav.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .core_model import (
    TWO_PI,
    DriveParams,
    SystemParams,
    emitter_decoherence,
    gamma_total,
)
from .errors import DomainError, PreconditionError, SingularParameterError

logger = logging.getLogger(__name__)

Drive = Union[float, np.ndarray, DriveParams]


def _as_axis(axis) -> np.ndarray:
    values = np.array(axis, dtype=float, ndmin=1)
    if values.ndim != 1:
        raise PreconditionError("spectrum axis must be one-dimensional")
    if not np.all(np.isfinite(values)):
        raise PreconditionError("spectrum axis must be finite")
    if values.size > 1 and np.any(np.diff(values) <= 0):
        raise PreconditionError("spectrum axis must be strictly ascending")
    return values


@dataclass(frozen=True)
class RealSpectrum:
    """Detuning axis (GHz) with real intensity samples."""

    axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        axis = _as_axis(self.axis)
        values = np.array(self.values, dtype=float, ndmin=1)
        if values.shape != axis.shape:
            raise PreconditionError(f"spectrum has {axis.size} axis points but {values.size} values")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "values", values)

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        if self.axis.size < 3:
            return True
        steps = np.diff(self.axis)
        return bool(np.allclose(steps, steps.mean(), rtol=rtol, atol=1e-12))

    @property
    def spacing(self) -> float:
        if self.axis.size < 2:
            return float("nan")
        return float((self.axis[-1] - self.axis[0]) / (self.axis.size - 1))


@dataclass(frozen=True)
class ComplexSpectrum:
    """Detuning axis (GHz) with complex amplitude samples."""

    axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        axis = _as_axis(self.axis)
        values = np.array(self.values, dtype=complex, ndmin=1)
        if values.shape != axis.shape:
            raise PreconditionError(f"spectrum has {axis.size} axis points but {values.size} values")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "values", values)

    def intensity(self, scale: float = 1.0) -> RealSpectrum:
        return RealSpectrum(self.axis, scale * np.abs(self.values) ** 2)


@dataclass(frozen=True)
class BlochState:
    """Steady-state coherence <S-> and inversion <Sz>."""

    s: complex
    s_z: float

    def __post_init__(self):
        if not (-0.5 - 1e-12 <= self.s_z <= 1e-12):
            raise DomainError(f"s_z must lie in [-0.5, 0], got {self.s_z}")
        if abs(self.s) > 0.5 + 1e-12:
            raise DomainError(f"|s| must be <= 0.5, got {abs(self.s)}")


def _check_rates(p: SystemParams, ideal_limit: bool):
    if emitter_decoherence(p) == 0:
        if not ideal_limit:
            raise SingularParameterError(
                "gamma_leak + 2*gamma_dp = 0; pass ideal_limit=True for the lossless-emitter limit"
            )
        if p.gamma_cav == 0:
            raise SingularParameterError("gamma_cav = 0 with a lossless emitter leaves the emitter undefined")


def _scalar_or_array(values):
    values = np.asarray(values)
    return values[()] if values.ndim == 0 else values


def _normalized_detuning(delta_omega, p: SystemParams):
    """(delta_omega + delta) in units of kappa/2."""
    return TWO_PI * (np.asarray(delta_omega, dtype=float) + p.delta) / (0.5 * p.cavity.kappa)


def bare_cavity(delta_omega, p: SystemParams):
    """Bare-cavity response t0 = 1 / (1 + i q (delta_omega + delta)/(kappa/2))."""
    y = _normalized_detuning(delta_omega, p)
    return _scalar_or_array(1.0 / (1.0 + 1j * p.cavity.q_ratio * y))


def drop_coefficient(delta_omega, S, p: SystemParams, ideal_limit: bool = False):
    """Drop-port transmission coefficient including coherent scattering.

    Written as -q t0 + q^2 gamma_cav t0^2 / ((1+S)(2i dw + q(gamma_cav t0 + G)))
    with G = gamma_leak + 2 gamma_dp. At q_ratio = 1 this is algebraically the
    f-factor form t0[-1 + f/((1+S)(f + (1 + 2i dw/G)/t0))] and it stays finite
    when G = 0.
    """
    _check_rates(p, ideal_limit)
    S = np.asarray(S, dtype=float)
    if np.any(S < 0) or np.any(np.isnan(S)):
        raise DomainError("saturation S must be >= 0")
    q = p.cavity.q_ratio
    t0 = 1.0 / (1.0 + 1j * q * _normalized_detuning(delta_omega, p))
    dw = TWO_PI * np.asarray(delta_omega, dtype=float)
    unsaturated = 1.0 / (1.0 + S)
    scattered = q * q * p.gamma_cav * t0 * t0 / (2j * dw + q * (p.gamma_cav * t0 + emitter_decoherence(p)))
    return _scalar_or_array(-q * t0 + unsaturated * scattered)


def bus_coefficient(delta_omega, S, p: SystemParams, ideal_limit: bool = False):
    """t_bus = 1 + t_drop."""
    return _scalar_or_array(1.0 + np.asarray(drop_coefficient(delta_omega, S, p, ideal_limit)))


def critical_power(delta_omega, p: SystemParams, ideal_limit: bool = False):
    """Drive power (photons/ns) that brings the inversion to s_z = -1/4."""
    _check_rates(p, ideal_limit)
    if p.gamma_cav == 0:
        raise SingularParameterError("critical power needs gamma_cav > 0")
    q = p.cavity.q_ratio
    gc = p.gamma_cav
    inv_f = emitter_decoherence(p) / gc
    dw = TWO_PI * np.asarray(delta_omega, dtype=float)
    y = _normalized_detuning(delta_omega, p)
    u = 2.0 * dw / gc
    bracket = (
        (1.0 + inv_f) ** 2
        + (q * y * inv_f) ** 2
        - 2.0 * u * y
        + (u / q) ** 2
        + (u * y) ** 2
    )
    return _scalar_or_array(0.25 * gc * bracket)


def critical_power_general(delta_omega, p: SystemParams, ideal_limit: bool = False):
    """Critical power from the unexpanded |t0 + 1/f + 2i dw/(gamma_cav q)|^2 / |t0|^2 form."""
    _check_rates(p, ideal_limit)
    if p.gamma_cav == 0:
        raise SingularParameterError("critical power needs gamma_cav > 0")
    q = p.cavity.q_ratio
    gc = p.gamma_cav
    t0 = 1.0 / (1.0 + 1j * q * _normalized_detuning(delta_omega, p))
    dw = TWO_PI * np.asarray(delta_omega, dtype=float)
    inv_f = emitter_decoherence(p) / gc
    terms = (
        inv_f ** 2
        + (t0 + np.conj(t0)) * inv_f
        + (2j * dw / (gc * q)) * (np.conj(t0) - t0)
        + (2.0 * dw / (gc * q)) ** 2
        + np.abs(t0) ** 2
    )
    return _scalar_or_array(0.25 * gc * np.real(terms) / np.abs(t0) ** 2)


def critical_photon_number(delta_omega, p: SystemParams, ideal_limit: bool = False):
    """n_c = P_c / gamma_tot, photons per emitter lifetime."""
    total = gamma_total(p)
    if total <= 0:
        raise SingularParameterError("gamma_cav + gamma_leak must be > 0")
    return _scalar_or_array(np.asarray(critical_power(delta_omega, p, ideal_limit)) / total)


def saturation_from_flux(n_in, delta_omega, p: SystemParams, ideal_limit: bool = False):
    """S = alpha n_in / n_c(delta_omega)."""
    n_in = np.asarray(n_in, dtype=float)
    if np.any(n_in < 0) or np.any(np.isnan(n_in)):
        raise DomainError(f"incident flux must be >= 0, got {n_in}")
    n_c = np.asarray(critical_photon_number(delta_omega, p, ideal_limit))
    return _scalar_or_array(p.cavity.alpha * n_in / n_c)


def saturation_profile(axis, drive: Drive, p: SystemParams, ideal_limit: bool = False) -> np.ndarray:
    """Saturation at every axis point.

    A flux drive gives a detuning-dependent S because n_c grows away from the
    emitter resonance.
    """
    axis = np.asarray(axis, dtype=float)
    if isinstance(drive, DriveParams):
        if drive.authoritative == "flux":
            return np.broadcast_to(saturation_from_flux(drive.value, axis, p, ideal_limit), axis.shape).astype(float)
        drive = drive.value
    S = np.asarray(drive, dtype=float)
    if np.any(S < 0) or np.any(np.isnan(S)):
        raise DomainError("saturation S must be >= 0")
    return np.broadcast_to(S, axis.shape).astype(float)


def bloch_steady_state(delta_omega: float, b_in: complex, p: SystemParams, ideal_limit: bool = False) -> BlochState:
    """Steady-state emitter coherence and inversion for drive amplitude b_in."""
    if not (np.isfinite(delta_omega) and np.isfinite(b_in)):
        raise DomainError("detuning and drive amplitude must be finite")
    power = abs(b_in) ** 2
    p_c = float(critical_power(delta_omega, p, ideal_limit))
    s_z = -0.5 / (1.0 + power / p_c)
    q = p.cavity.q_ratio
    gc = p.gamma_cav
    t0 = complex(bare_cavity(delta_omega, p))
    dw = TWO_PI * float(delta_omega)
    denominator = t0 + emitter_decoherence(p) / gc + 2j * dw / (gc * q)
    s = -2j * np.sqrt(2.0 / gc) * s_z * b_in * t0 / denominator
    return BlochState(s=complex(s), s_z=float(s_z))


def coefficient_spectrum(axis, drive: Drive, p: SystemParams, ideal_limit: bool = False) -> ComplexSpectrum:
    """Complex drop-port coefficient on a detuning grid."""
    axis = _as_axis(axis)
    S = saturation_profile(axis, drive, p, ideal_limit)
    return ComplexSpectrum(axis, drop_coefficient(axis, S, p, ideal_limit))


def spectrum(axis, drive: Drive, p: SystemParams, ideal_limit: bool = False) -> Tuple[RealSpectrum, RealSpectrum]:
    """Unbroadened port intensities T_drop = eta |t_drop|^2 and T_bus = |t_bus|^2."""
    t_drop = coefficient_spectrum(axis, drive, p, ideal_limit)
    drop = RealSpectrum(t_drop.axis, p.cavity.eta * np.abs(t_drop.values) ** 2)
    bus = RealSpectrum(t_drop.axis, np.abs(1.0 + t_drop.values) ** 2)
    return drop, bus


def bare_spectrum(axis, p: SystemParams) -> Tuple[RealSpectrum, RealSpectrum]:
    """Port intensities of the cavity with a fully saturated emitter."""
    axis = _as_axis(axis)
    t_drop = -p.cavity.q_ratio * np.asarray(bare_cavity(axis, p))
    drop = RealSpectrum(axis, p.cavity.eta * np.abs(t_drop) ** 2)
    bus = RealSpectrum(axis, np.abs(1.0 + t_drop) ** 2)
    return drop, bus


def extinction(value, bare):
    """Relative port change (T - T_bare) / T_bare."""
    return _scalar_or_array((np.asarray(value, dtype=float) - bare) / np.asarray(bare, dtype=float))
