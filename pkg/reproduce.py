#!/usr/bin/env python3
"""Print the headline numbers of the reference quantum-dot router device"""

import logging
import os
import sys

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from routerkit import JobManager, reference_params
from routerkit.broadening import default_dip_axis, effective_critical_photon_number, routing_metrics
from routerkit.core_model import DriveParams, rate_from_linewidth
from routerkit.merit import ModeGeometry, merit_summary, routing_vs_purcell
from routerkit.scattering import critical_photon_number


def main():
    """Evaluate the reference device and print a short report."""
    debug = os.getenv("ROUTERKIT_DEBUG", "false").lower() in ("1", "true", "yes")
    logging.basicConfig(level=logging.DEBUG if debug else logging.WARNING, format="[%(name)s] %(message)s")

    p = reference_params()
    manager = JobManager(progress=True)

    print("\nQUANTUM-DOT ROUTER - reference device\n")
    print(f"  emitter-cavity detuning   {p.delta:.3f} GHz")
    print(f"  spectral diffusion sigma  {p.sigma_sd:.2f} GHz")

    n_c = float(critical_photon_number(0.0, p))
    n_c_ideal = float(critical_photon_number(0.0, p.updated(gamma_leak=0.0, gamma_dp=0.0), ideal_limit=True))
    print(f"  critical photon number    {n_c:.3f} (lossless limit {n_c_ideal:.3f})")

    axis = default_dip_axis(p)
    bare = routing_metrics(axis, 0.0, p.updated(sigma_sd=0.0))
    broad = routing_metrics(axis, 0.0, p)
    print(f"  drop extinction, S = 0    {100 * bare.drop_extinction:.1f}% unbroadened, {100 * broad.drop_extinction:.1f}% broadened")
    flux = routing_metrics(axis, DriveParams.flux(1.4), p)
    print(f"  drop extinction, n_in=1.4 {100 * flux.drop_extinction:.1f}% broadened")
    print(f"  broadened critical n      {effective_critical_photon_number(p):.3f}")

    print("\n" + "=" * 50)
    print("FIGURES OF MERIT")
    print("=" * 50)
    summary = merit_summary(
        gamma_fast=4.97,
        gamma_bulk=p.emitter.gamma_bulk,
        kappa=rate_from_linewidth(36.6),
        geometry=ModeGeometry(wavelength_nm=940.0, n_index=3.5, v_eff=18.0, q_exp=8900.0),
        qe_bulk=0.9,
        p=p,
    )
    for key, value in summary.items():
        print(f"  {key:<22} {value if value is None else f'{value:.4g}'}")

    print("\n" + "=" * 50)
    print("ROUTING VERSUS PURCELL FACTOR")
    print("=" * 50)
    F_axis = np.array([1.0, 2.0, 5.0, 10.0, 20.0, 40.0])
    clean = routing_vs_purcell(F_axis, p, with_sd=False, manager=manager)
    noisy = routing_vs_purcell(F_axis, p, with_sd=True, manager=manager)
    for F, a, b in zip(F_axis, clean.routing_efficiency, noisy.routing_efficiency):
        print(f"  F = {F:5.1f}   no SD {100 * a:5.1f}%   with SD {100 * b:5.1f}%")

    manager.log_status()


if __name__ == "__main__":
    main()
