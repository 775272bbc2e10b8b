"""
routerkit - Quantum-dot photon router modelling and fitting

This package models a quantum dot coupled to a microdisk add-drop filter and can:
- Compute drop and bus transmission spectra with emitter saturation
- Broaden spectra by Gaussian spectral diffusion
- Fit multi-power spectra, lifetimes, resonances and coupling-versus-gap series
- Derive figures of merit: Purcell factor, beta, g, C and Bell-analyzer rates
"""

from .core_model import (
    CavityParams,
    DriveParams,
    EmitterParams,
    SystemParams,
    load_params,
    reference_params,
    save_params,
)
from .scattering import (
    BlochState,
    ComplexSpectrum,
    RealSpectrum,
    bloch_steady_state,
    bus_coefficient,
    critical_photon_number,
    critical_power,
    drop_coefficient,
    spectrum,
)
from .broadening import (
    broadened_spectrum,
    convolve_spectrum,
    detuning_sweep,
    effective_critical_photon_number,
    routing_metrics,
    saturation_curve,
    waveguide_reference,
)
from .fitkit import fit_lifetime, fit_lorentzian, fit_multipower, least_squares
from .merit import merit_summary, mode_volume, routing_vs_purcell
from .coupling import CouplingModel, fit_gap_series
from .scanio import detect_resonances, normalize_to_background
from .manager import JobManager
from .errors import RouterkitError, RouterkitWarning

__version__ = "0.1.0"

__all__ = [
    "CavityParams",
    "DriveParams",
    "EmitterParams",
    "SystemParams",
    "load_params",
    "reference_params",
    "save_params",
    "BlochState",
    "ComplexSpectrum",
    "RealSpectrum",
    "bloch_steady_state",
    "bus_coefficient",
    "critical_photon_number",
    "critical_power",
    "drop_coefficient",
    "spectrum",
    "broadened_spectrum",
    "convolve_spectrum",
    "detuning_sweep",
    "effective_critical_photon_number",
    "routing_metrics",
    "saturation_curve",
    "waveguide_reference",
    "fit_lifetime",
    "fit_lorentzian",
    "fit_multipower",
    "least_squares",
    "merit_summary",
    "mode_volume",
    "routing_vs_purcell",
    "CouplingModel",
    "fit_gap_series",
    "detect_resonances",
    "normalize_to_background",
    "JobManager",
    "RouterkitError",
    "RouterkitWarning",
]
