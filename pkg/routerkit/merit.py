"""Figures of merit: Purcell factor, beta, coupling strength, cooperativity,
Bell-analyzer success rates, cavity quantum efficiency, mode volume and the
routing-versus-Purcell curves.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.constants import epsilon_0, mu_0
from scipy.integrate import trapezoid

from .broadening import default_dip_axis, effective_critical_photon_number, routing_metrics
from .core_model import TWO_PI, SystemParams, linewidth_from_rate
from .errors import DegenerateFieldError, DomainError, PreconditionError, RouterkitWarning
from .manager import JobManager
from .scattering import critical_photon_number

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModeGeometry:
    """Cavity mode: wavelength (nm), index, volume in (lambda/n)^3 and loaded Q."""

    wavelength_nm: float
    n_index: float
    v_eff: float
    q_exp: float

    def __post_init__(self):
        for name in ("wavelength_nm", "n_index", "v_eff", "q_exp"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be > 0, got {value}")


def purcell_ideal(g: ModeGeometry) -> float:
    """F = (3 / 4 pi^2) Q / V with V in units of (lambda/n)^3."""
    return 3.0 / (4.0 * math.pi ** 2) * g.q_exp / g.v_eff


def purcell_from_lifetimes(gamma_fast: float, gamma_bulk: float) -> float:
    """F = gamma_fast / gamma_bulk - 1."""
    if gamma_fast <= 0 or gamma_bulk <= 0:
        raise DomainError("decay rates must be > 0")
    return gamma_fast / gamma_bulk - 1.0


def lifetime_enhancement(gamma_fast: float, gamma_bulk: float) -> float:
    """Decay-rate ratio gamma_fast / gamma_bulk (= F + 1)."""
    if gamma_fast <= 0 or gamma_bulk <= 0:
        raise DomainError("decay rates must be > 0")
    return gamma_fast / gamma_bulk


def beta_factor(F):
    """Fraction of emission into the cavity mode, F / (F + 1)."""
    F_arr = np.asarray(F, dtype=float)
    if np.any(F_arr < 0) or np.any(np.isnan(F_arr)):
        raise DomainError(f"Purcell factor must be >= 0, got {F}")
    beta = F_arr / (F_arr + 1.0)
    return float(beta) if beta.ndim == 0 else beta


def coupling_strength(F: float, kappa: float, gamma_bulk: float) -> float:
    """g = sqrt(F kappa gamma_bulk) / 2, angular units."""
    if F < 0 or kappa < 0 or gamma_bulk < 0:
        raise DomainError("F, kappa and gamma_bulk must be >= 0")
    return math.sqrt(F * kappa * gamma_bulk) / 2.0


def cooperativity(g: float, kappa: float, gamma_bulk: float) -> float:
    """C = 4 g^2 / (kappa gamma_bulk)."""
    if kappa <= 0 or gamma_bulk <= 0:
        raise DomainError("kappa and gamma_bulk must be > 0")
    return 4.0 * g * g / (kappa * gamma_bulk)


class BellMode(str, Enum):
    CAVITY_QED = "cavity-qed"
    PASSIVE = "passive"


def bell_success(mode, value: float) -> float:
    """Bell-state analyzer success probability.

    cavity-qed takes the cooperativity C and gives 1 - 1/C (C >= 1);
    passive takes beta and gives (2 beta - 1) / beta (beta >= 0.5).
    """
    mode = BellMode(mode)
    if mode is BellMode.CAVITY_QED:
        if not value >= 1.0:
            raise DomainError(f"cavity-QED analyzer needs cooperativity C >= 1, got {value}")
        rate = 1.0 - 1.0 / value
    else:
        if not value >= 0.5:
            raise DomainError(f"passive analyzer needs beta >= 0.5, got {value}")
        rate = (2.0 * value - 1.0) / value
    return min(max(rate, 0.0), 1.0)


def qe_cavity(qe_bulk: float, F: float) -> float:
    """Quantum efficiency with Purcell-enhanced radiative decay, capped at 1."""
    if not 0 < qe_bulk <= 1:
        raise DomainError(f"bulk quantum efficiency must lie in (0, 1], got {qe_bulk}")
    if F < 0:
        raise DomainError(f"Purcell factor must be >= 0, got {F}")
    return min(1.0, qe_bulk * (F + 1.0) / (qe_bulk * F + 1.0))


def merit_summary(
    gamma_fast: float,
    gamma_bulk: float,
    kappa: float,
    geometry: Optional[ModeGeometry] = None,
    qe_bulk: Optional[float] = None,
    p: Optional[SystemParams] = None,
) -> Dict[str, float]:
    """Headline figures of merit from measured rates (rad/ns)."""
    F = purcell_from_lifetimes(gamma_fast, gamma_bulk)
    beta = beta_factor(F)
    g = coupling_strength(F, kappa, gamma_bulk)
    C = cooperativity(g, kappa, gamma_bulk)
    summary = {
        "F": F,
        "lifetime_enhancement": lifetime_enhancement(gamma_fast, gamma_bulk),
        "beta": beta,
        "g_ghz": linewidth_from_rate(g),
        "C": C,
        "bell_cavity_qed": bell_success(BellMode.CAVITY_QED, C) if C >= 1 else None,
        "bell_passive": bell_success(BellMode.PASSIVE, beta) if beta >= 0.5 else None,
    }
    if geometry is not None:
        F_ideal = purcell_ideal(geometry)
        summary["F_ideal"] = F_ideal
        summary["beta_ideal"] = beta_factor(F_ideal)
        summary["bell_passive_ideal"] = bell_success(BellMode.PASSIVE, summary["beta_ideal"])
    if qe_bulk is not None:
        summary["qe_cavity"] = qe_cavity(qe_bulk, F)
    if p is not None:
        summary["n_c"] = float(critical_photon_number(0.0, p))
    return summary


# Mode volume

_COMPONENTS = ("er", "ez", "ephi", "hr", "hz", "hphi")


@dataclass(frozen=True)
class FieldGrid:
    """Complex E and H components on a cylindrical (r, z) grid in micrometres.

    Component arrays have shape (len(r), len(z)). Descending axes are flipped
    on construction.
    """

    r: np.ndarray
    z: np.ndarray
    er: np.ndarray
    ez: np.ndarray
    ephi: np.ndarray
    hr: np.ndarray
    hz: np.ndarray
    hphi: np.ndarray
    eps: np.ndarray
    mu: np.ndarray
    n_index: float
    wavelength_nm: Optional[float] = None

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        z = np.asarray(self.z, dtype=float)
        shape = (r.size, z.size)
        arrays = {name: np.asarray(getattr(self, name), dtype=complex) for name in _COMPONENTS}
        arrays["eps"] = np.broadcast_to(np.asarray(self.eps, dtype=float), shape).copy()
        arrays["mu"] = np.broadcast_to(np.asarray(self.mu, dtype=float), shape).copy()
        for name, values in arrays.items():
            if values.shape != shape:
                raise PreconditionError(f"{name} has shape {values.shape}, grid is {shape}")
        if np.any(arrays["eps"] <= 0):
            raise PreconditionError("permittivity must be > 0")
        if not (self.n_index > 0):
            raise PreconditionError("refractive index must be > 0")
        if r.size > 1 and np.all(np.diff(r) < 0):
            r = r[::-1]
            arrays = {k: v[::-1, :] for k, v in arrays.items()}
        if z.size > 1 and np.all(np.diff(z) < 0):
            z = z[::-1]
            arrays = {k: v[:, ::-1] for k, v in arrays.items()}
        if np.any(np.diff(r) <= 0) or np.any(np.diff(z) <= 0):
            raise PreconditionError("grid axes must be strictly monotonic")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "z", z)
        for name, values in arrays.items():
            object.__setattr__(self, name, values)


@dataclass(frozen=True)
class ModeVolume:
    um3: float
    lambda_n3: Optional[float]
    imag_fraction: float


def mode_volume(grid: FieldGrid) -> ModeVolume:
    """Mode volume of a lossy mode from complex (not modulus) field squares.

    Permittivity and permeability are relative values multiplied by the
    vacuum constants; the normalization uses eps0 n^2 E_r^2 at the maximum of
    |E_r|.
    """
    eps = grid.eps * epsilon_0
    mu = grid.mu * mu_0
    density = (
        eps * (-grid.er ** 2 - grid.ez ** 2 + grid.ephi ** 2)
        - mu * (grid.hr ** 2 + grid.hz ** 2 - grid.hphi ** 2)
    )
    integrand = grid.r[:, None] * density
    integral = trapezoid(trapezoid(integrand, grid.z, axis=1), grid.r)

    peak = np.unravel_index(np.argmax(np.abs(grid.er)), grid.er.shape)
    er_max = grid.er[peak]
    if er_max == 0:
        raise DegenerateFieldError("E_r vanishes everywhere; mode volume undefined")
    volume = math.pi * integral / (2.0 * epsilon_0 * grid.n_index ** 2 * er_max ** 2)

    real = float(np.real(volume))
    imag_fraction = abs(float(np.imag(volume))) / abs(real) if real != 0 else math.inf
    if imag_fraction > 0.01:
        warnings.warn(
            f"mode volume has an imaginary part of {100 * imag_fraction:.2g}% of its real part",
            RouterkitWarning,
            stacklevel=2,
        )
    lambda_n3 = None
    if grid.wavelength_nm is not None:
        cube = (grid.wavelength_nm * 1e-3 / grid.n_index) ** 3
        lambda_n3 = real / cube
    return ModeVolume(um3=real, lambda_n3=lambda_n3, imag_fraction=imag_fraction)


# Routing versus Purcell factor


@dataclass(frozen=True)
class PurcellRoutingCurve:
    F: np.ndarray
    drop_extinction: np.ndarray
    routing_efficiency: np.ndarray
    n_c: np.ndarray


def routing_vs_purcell(
    F_axis: Sequence[float],
    base: SystemParams,
    with_sd: bool = True,
    manager: Optional[JobManager] = None,
) -> PurcellRoutingCurve:
    """Zero-power broadened dip extinction and n_c as gamma_cav = F gamma_bulk grows.

    The emitter is tuned onto the cavity (delta = 0); gamma_leak stays fixed.
    With spectral diffusion n_c is the broadened half-depth flux; without it
    n_c is the critical photon number at the dip.
    """
    F_axis = np.asarray(F_axis, dtype=float)
    if F_axis.size == 0 or np.any(F_axis <= 0) or np.any(np.diff(F_axis) <= 0):
        raise PreconditionError("F axis must be positive and strictly ascending")
    manager = manager or JobManager()
    sigma = base.sigma_sd if with_sd else 0.0

    def point(F: float):
        p = base.updated(
            gamma_cav=F * base.emitter.gamma_bulk,
            omega_qd=base.cavity.omega_cav,
            sigma_sd=sigma,
        )
        axis = default_dip_axis(p)
        metrics = routing_metrics(axis, 0.0, p)
        if with_sd and sigma > 0:
            n_c = effective_critical_photon_number(p, axis=axis)
        else:
            n_c = float(critical_photon_number(metrics.dip_detuning, p))
        return metrics.drop_extinction, n_c

    results = manager.map(point, list(F_axis), desc="purcell sweep")
    extinction = np.array([r[0] for r in results])
    return PurcellRoutingCurve(
        F=F_axis,
        drop_extinction=extinction,
        routing_efficiency=-extinction,
        n_c=np.array([r[1] for r in results]),
    )


def decoherence_ratios(F_axis: Sequence[float], p: SystemParams) -> Dict[str, np.ndarray]:
    """Spectral diffusion and pure dephasing relative to the enhanced decay F gamma_bulk."""
    F_axis = np.asarray(F_axis, dtype=float)
    if np.any(F_axis <= 0):
        raise DomainError("Purcell factors must be > 0")
    enhanced = F_axis * p.emitter.gamma_bulk
    return {
        "F": F_axis,
        "sd_ratio": TWO_PI * p.sigma_sd / enhanced,
        "dp_ratio": p.emitter.gamma_dp / enhanced,
        "beta": beta_factor(F_axis),
    }
