"""Parameter records and unit helpers for the emitter-cavity-waveguide system.

Rates are angular (rad/ns) internally. Linewidths, detunings, resonance
frequencies and the spectral-diffusion width are ordinary frequencies in GHz.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Dict, Optional, Union

import numpy as np

from .errors import DomainError, InputError, SingularParameterError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

_EMITTER_FIELDS = ("gamma_bulk", "gamma_leak", "gamma_dp", "omega_qd")
_CAVITY_FIELDS = ("kappa", "omega_cav", "q_ratio", "eta", "alpha")


def _require(condition: bool, message: str):
    if not condition:
        raise DomainError(message)


def rate_from_linewidth(linewidth_ghz):
    """Ordinary-frequency linewidth (GHz) -> angular rate (rad/ns)."""
    values = np.asarray(linewidth_ghz, dtype=float)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DomainError(f"linewidth must be >= 0 GHz, got {linewidth_ghz}")
    result = TWO_PI * values
    return float(result) if result.ndim == 0 else result


def linewidth_from_rate(rate):
    """Angular rate (rad/ns) -> ordinary-frequency linewidth (GHz)."""
    values = np.asarray(rate, dtype=float)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise DomainError(f"rate must be >= 0 rad/ns, got {rate}")
    result = values / TWO_PI
    return float(result) if result.ndim == 0 else result


@dataclass(frozen=True)
class EmitterParams:
    """Quantum-dot rates (rad/ns) and resonance (GHz)."""

    gamma_bulk: float
    gamma_leak: float
    gamma_dp: float
    omega_qd: float

    def __post_init__(self):
        for name in ("gamma_bulk", "gamma_leak", "gamma_dp"):
            value = getattr(self, name)
            _require(math.isfinite(value) and value >= 0, f"{name} must be finite and >= 0, got {value}")
        _require(self.gamma_bulk > 0, "gamma_bulk must be > 0")
        _require(math.isfinite(self.omega_qd), "omega_qd must be finite")


@dataclass(frozen=True)
class CavityParams:
    """Cavity linewidth (rad/ns), resonance (GHz) and port scale factors."""

    kappa: float
    omega_cav: float
    q_ratio: float = 1.0
    eta: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        _require(math.isfinite(self.kappa) and self.kappa > 0, f"kappa must be > 0, got {self.kappa}")
        _require(math.isfinite(self.omega_cav), "omega_cav must be finite")
        _require(0 < self.q_ratio <= 1, f"q_ratio must lie in (0, 1], got {self.q_ratio}")
        _require(math.isfinite(self.eta) and self.eta >= 0, f"eta must be >= 0, got {self.eta}")
        _require(0 <= self.alpha <= 1, f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class SystemParams:
    """Full parameter set of the emitter-cavity-waveguide system."""

    emitter: EmitterParams
    cavity: CavityParams
    gamma_cav: float
    sigma_sd: float = 0.0

    def __post_init__(self):
        _require(math.isfinite(self.gamma_cav) and self.gamma_cav >= 0, f"gamma_cav must be >= 0, got {self.gamma_cav}")
        _require(math.isfinite(self.sigma_sd) and self.sigma_sd >= 0, f"sigma_sd must be >= 0, got {self.sigma_sd}")
        _require(math.isfinite(self.delta), "delta must be finite")

    @property
    def delta(self) -> float:
        """Emitter-cavity detuning omega_qd - omega_cav (GHz)."""
        return self.emitter.omega_qd - self.cavity.omega_cav

    def updated(self, **changes) -> "SystemParams":
        """Copy with flat field names routed to the nested records."""
        emitter = {k: changes.pop(k) for k in list(changes) if k in _EMITTER_FIELDS}
        cavity = {k: changes.pop(k) for k in list(changes) if k in _CAVITY_FIELDS}
        unknown = set(changes) - {"gamma_cav", "sigma_sd"}
        if unknown:
            raise DomainError(f"unknown parameter(s): {sorted(unknown)}")
        return replace(
            self,
            emitter=replace(self.emitter, **emitter),
            cavity=replace(self.cavity, **cavity),
            **changes,
        )


@dataclass(frozen=True)
class DriveParams:
    """Drive strength given either as saturation S or incident flux n_in."""

    value: float
    authoritative: str = "saturation"

    def __post_init__(self):
        if self.authoritative not in ("saturation", "flux"):
            raise DomainError(f"authoritative must be 'saturation' or 'flux', got {self.authoritative!r}")
        _require(not math.isnan(self.value) and self.value >= 0, f"drive must be >= 0, got {self.value}")
        if self.authoritative == "flux":
            _require(math.isfinite(self.value), "incident flux must be finite")

    @classmethod
    def saturation(cls, S: float) -> "DriveParams":
        return cls(float(S), "saturation")

    @classmethod
    def flux(cls, n_in: float) -> "DriveParams":
        return cls(float(n_in), "flux")

    @property
    def S(self) -> Optional[float]:
        return self.value if self.authoritative == "saturation" else None

    @property
    def n_in(self) -> Optional[float]:
        return self.value if self.authoritative == "flux" else None


def emitter_decoherence(p: SystemParams) -> float:
    """gamma_leak + 2 gamma_dp, the denominator of the f factor."""
    return p.emitter.gamma_leak + 2.0 * p.emitter.gamma_dp


def f_factor(p: SystemParams, ideal_limit: bool = False) -> float:
    """f = gamma_cav / (gamma_leak + 2 gamma_dp).

    A zero denominator raises SingularParameterError unless ``ideal_limit``
    is set, in which case f is infinite.
    """
    denominator = emitter_decoherence(p)
    if denominator == 0:
        if ideal_limit:
            return math.inf
        raise SingularParameterError(
            "gamma_leak + 2*gamma_dp = 0; pass ideal_limit=True for the f -> inf limit"
        )
    return p.gamma_cav / denominator


def gamma_total(p: SystemParams) -> float:
    """Overall emitter decay rate gamma_cav + gamma_leak (rad/ns)."""
    return p.gamma_cav + p.emitter.gamma_leak


def reference_params() -> SystemParams:
    """Reference parameter point of the measured device."""
    kappa_ghz = 36.6
    return SystemParams(
        emitter=EmitterParams(
            gamma_bulk=0.63,
            gamma_leak=0.63,
            gamma_dp=rate_from_linewidth(0.01),
            omega_qd=0.02 * kappa_ghz,
        ),
        cavity=CavityParams(kappa=rate_from_linewidth(kappa_ghz), omega_cav=0.0),
        gamma_cav=4.34,
        sigma_sd=0.6,
    )


# JSON parameter file

_REQUIRED_KEYS = ("gamma_bulk_ns", "kappa_ghz", "omega_qd_ghz", "omega_cav_ghz", "gamma_cav_ns")
_OPTIONAL_KEYS = {
    "gamma_leak_ns": None,  # defaults to gamma_bulk_ns
    "gamma_dp_ghz": 0.0,
    "q_ratio": 1.0,
    "eta": 1.0,
    "alpha": 1.0,
    "sigma_sd_ghz": 0.0,
}


def params_from_dict(record: Dict[str, float]) -> SystemParams:
    """Build SystemParams from the JSON parameter record."""
    if not isinstance(record, dict):
        raise InputError("parameter file must contain a JSON object")
    unknown = set(record) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if unknown:
        raise InputError(f"unknown parameter key(s): {sorted(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in record]
    if missing:
        raise InputError(f"missing parameter key(s): {missing}")
    values = dict(_OPTIONAL_KEYS)
    values.update(record)
    try:
        values = {k: float(v) if v is not None else None for k, v in values.items()}
    except (TypeError, ValueError) as e:
        raise InputError(f"parameter values must be numbers: {e}")
    if values["gamma_leak_ns"] is None:
        values["gamma_leak_ns"] = values["gamma_bulk_ns"]
    try:
        return SystemParams(
            emitter=EmitterParams(
                gamma_bulk=values["gamma_bulk_ns"],
                gamma_leak=values["gamma_leak_ns"],
                gamma_dp=rate_from_linewidth(values["gamma_dp_ghz"]),
                omega_qd=values["omega_qd_ghz"],
            ),
            cavity=CavityParams(
                kappa=rate_from_linewidth(values["kappa_ghz"]),
                omega_cav=values["omega_cav_ghz"],
                q_ratio=values["q_ratio"],
                eta=values["eta"],
                alpha=values["alpha"],
            ),
            gamma_cav=values["gamma_cav_ns"],
            sigma_sd=values["sigma_sd_ghz"],
        )
    except DomainError as e:
        raise InputError(f"invalid parameter record: {e}")


def params_to_dict(p: SystemParams) -> Dict[str, float]:
    return {
        "gamma_bulk_ns": p.emitter.gamma_bulk,
        "gamma_leak_ns": p.emitter.gamma_leak,
        "gamma_dp_ghz": linewidth_from_rate(p.emitter.gamma_dp),
        "kappa_ghz": linewidth_from_rate(p.cavity.kappa),
        "omega_qd_ghz": p.emitter.omega_qd,
        "omega_cav_ghz": p.cavity.omega_cav,
        "q_ratio": p.cavity.q_ratio,
        "eta": p.cavity.eta,
        "alpha": p.cavity.alpha,
        "sigma_sd_ghz": p.sigma_sd,
        "gamma_cav_ns": p.gamma_cav,
    }


def load_params(path: Union[str, os.PathLike]) -> SystemParams:
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not valid JSON ({e})")
    except OSError as e:
        raise InputError(f"{path}: {e}")
    logger.debug("Loaded parameters from %s", path)
    return params_from_dict(record)


def save_params(p: SystemParams, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(params_to_dict(p), f, indent=2)
        f.write("\n")
