"""routerkit command line.

Exit codes: 0 success, 2 input or domain error, 3 non-convergence. Errors go
to standard error as ``E:<exit>:<code>: <message>``.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import __version__
from .broadening import (
    SdModel,
    broadened_spectrum,
    detuning_sweep,
    effective_critical_photon_number,
    saturation_curve,
)
from .core_model import DriveParams, load_params, reference_params, rate_from_linewidth
from .coupling import CouplingModel, fit_gap_series
from .errors import ConvergenceError, InputError, RouterkitError
from .fitkit import DataSeries, fit_lifetime, fit_lorentzian, fit_multipower, subtract_second_cavity
from .manager import JobManager
from .merit import FieldGrid, ModeGeometry, merit_summary, mode_volume
from .scanio import (
    detect_resonances,
    normalize_to_background,
    read_field_grid,
    read_gap_series,
    read_lifetime,
    read_multipower,
    read_raw_scan,
    write_resonance_table,
    write_spectrum,
    write_table,
)
from .scattering import spectrum

logger = logging.getLogger("routerkit")


class RouterkitArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises InputError instead of exiting."""

    def error(self, message):
        raise InputError(message)


def _configure_logging(verbose: bool):
    debug = verbose or os.getenv("ROUTERKIT_DEBUG", "false").lower() in ("1", "true", "yes")
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.WARNING,
        format="[%(name)s] %(message)s",
        stream=sys.stderr,
    )


def _params(args):
    return load_params(args.params) if args.params else reference_params()


def _axis(start: float, stop: float, step: float) -> np.ndarray:
    if step <= 0 or stop <= start:
        raise InputError("axis needs start < stop and step > 0")
    n = int(round((stop - start) / step))
    return start + step * np.arange(n + 1)


def _count(value: float, name: str) -> int:
    if value < 1 or value != int(value):
        raise InputError(f"{name} needs a positive whole number of points, got {value:g}")
    return int(value)


def _drive(args) -> DriveParams:
    if args.flux is not None:
        return DriveParams.flux(args.flux)
    return DriveParams.saturation(args.S)


def _out(args):
    return args.out if args.out else sys.stdout


def _emit_json(record, out=None):
    text = json.dumps(record, indent=2, sort_keys=False)
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
    else:
        print(text)


def _report(result, extra=None, out=None):
    _emit_json(result.to_report(extra), out)
    if not result.converged:
        raise ConvergenceError(f"{result.model_id} fit ended with status {result.status!r}")


def cmd_spectrum(args) -> int:
    p = _params(args)
    if args.no_sd:
        p = p.updated(sigma_sd=0.0)
    axis = _axis(*args.axis)
    drive = _drive(args)
    if p.sigma_sd == 0:
        drop, bus = spectrum(axis, drive, p)
    else:
        mode = "ensemble" if args.ensemble_sd else "convolution"
        drop, bus = broadened_spectrum(axis, drive, p, mode=mode)
    write_spectrum(drop, bus, _out(args))
    return 0


def cmd_saturation(args) -> int:
    p = _params(args)
    start, stop, num = args.n_in
    if start < 0 or stop < start:
        raise InputError("--n-in needs 0 <= START <= STOP")
    n_in = np.linspace(start, stop, _count(num, "--n-in"))
    mode = "ensemble" if args.ensemble_sd else "convolution"
    curve = saturation_curve(n_in, p, mode=mode, waveguide=args.waveguide)
    meta = {"metric_drop": "relative drop-port extinction", "metric_bus": "absolute bus-port gain"}
    if args.waveguide:
        meta["device"] = "emitter in a bare waveguide"
    if args.critical:
        meta["n_c_broadened"] = effective_critical_photon_number(p, mode=mode)
    write_table(
        _out(args),
        ["n_in", "drop_extinction", "bus_gain"],
        zip(curve.n_in, curve.drop_extinction, curve.bus_gain),
        meta=meta,
    )
    return 0


def cmd_routing(args) -> int:
    p = _params(args)
    deltas = _axis(*args.delta)
    sd_model = None
    if args.sd_slope is not None or args.sd_intercept is not None:
        sd_model = SdModel(slope=args.sd_slope or 0.0, intercept=args.sd_intercept if args.sd_intercept is not None else p.sigma_sd)
    sweep = detuning_sweep(deltas, _drive(args), p, sd_model=sd_model)
    write_table(
        _out(args),
        ["delta_ghz", "sigma_sd_ghz", "drop_change", "bus_change"],
        zip(sweep.delta, sweep.sigma_sd, sweep.drop_change, sweep.bus_change),
        meta={"drop_change": "relative to bare cavity", "bus_change": "absolute fraction of input"},
    )
    return 0


def cmd_merit(args) -> int:
    p = _params(args)
    geometry = ModeGeometry(args.wavelength_nm, args.n_index, args.v_eff, args.q)
    summary = merit_summary(
        gamma_fast=args.gamma_fast,
        gamma_bulk=args.gamma_bulk,
        kappa=rate_from_linewidth(args.kappa_ghz),
        geometry=geometry,
        qe_bulk=args.qe_bulk,
        p=p,
    )
    _emit_json(summary, args.out)
    return 0


def cmd_fit_scan(args) -> int:
    scan = read_raw_scan(args.scan)
    y = scan.port(args.port)
    x = scan.freq
    if args.neighbor:
        if not args.window:
            raise InputError("--neighbor needs --window around the primary mode")
        y = subtract_second_cavity(DataSeries(x, y), tuple(args.window), tuple(args.neighbor), seed=args.seed).cleaned.y
    if args.window:
        keep = (x >= args.window[0]) & (x <= args.window[1])
        x, y = x[keep], y[keep]
    fit = fit_lorentzian(DataSeries(x, y), seed=args.seed)
    extra = {"center_ghz": fit.center, "fwhm_ghz": fit.fwhm, "q": fit.q, "delta_t": fit.delta_t}
    _report(fit.result, extra, args.out)
    return 0


def cmd_fit_lifetime(args) -> int:
    t, counts = read_lifetime(args.data)
    model = fit_lifetime(t, counts, order=args.order, poisson=not args.no_poisson, seed=args.seed)
    extra = {"t0_ns": model.t0}
    if args.gamma_bulk is not None:
        extra["lifetime_enhancement"] = model.rates[0] / args.gamma_bulk
        extra["F"] = model.rates[0] / args.gamma_bulk - 1.0
    _report(model.result, extra, args.out)
    return 0


def cmd_fit_multipower(args) -> int:
    p0 = _params(args)
    series = read_multipower(args.data)
    manager = JobManager(progress=args.progress)
    fit = fit_multipower(series, p0, fixed=args.fixed, starts=args.starts, seed=args.seed, manager=manager)
    extra = {
        "omega_qd_ghz": fit.params.emitter.omega_qd,
        "low_power_extinction": fit.low_power_extinction(),
    }
    manager.log_status()
    _report(fit.result, extra, args.out)
    return 0


def cmd_fit_gap(args) -> int:
    data = read_gap_series(args.data)
    init = CouplingModel(*args.init)
    fit = fit_gap_series(data, init, mode_order=args.order, fixed=args.fixed, seed=args.seed)
    extra = {"critical_gap_nm": fit.critical_gap if fit.critical_gap is not None else "not reached"}
    _report(fit.result, extra, args.out)
    return 0


def cmd_modevolume(args) -> int:
    grid: FieldGrid = read_field_grid(args.grid)
    if args.wavelength_nm is not None:
        if args.wavelength_nm <= 0:
            raise InputError("--wavelength-nm must be > 0")
        grid = replace(grid, wavelength_nm=args.wavelength_nm)
    volume = mode_volume(grid)
    _emit_json(
        {"volume_um3": volume.um3, "volume_lambda_n3": volume.lambda_n3, "imag_fraction": volume.imag_fraction},
        args.out,
    )
    return 0


def cmd_detect(args) -> int:
    scan = read_raw_scan(args.scan)
    if args.window is not None:
        scan = normalize_to_background(scan, args.window)
    table = detect_resonances(scan, args.prominence, port=args.port, fsr_candidates=args.fsr or ())
    write_resonance_table(table, _out(args))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = RouterkitArgumentParser(prog="routerkit", description="Quantum-dot photon router modelling and fitting")
    parser.add_argument("--version", action="version", version=f"routerkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized restarts")
    sub = parser.add_subparsers(dest="command", parser_class=RouterkitArgumentParser)
    sub.required = True

    def with_params(p):
        p.add_argument("--params", help="JSON parameter file (default: reference device)")
        p.add_argument("--out", help="output file (default: stdout)")
        return p

    def with_drive(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument("--S", type=float, default=0.0, help="saturation parameter")
        group.add_argument("--flux", type=float, help="incident photons per lifetime")
        return p

    p = with_drive(with_params(sub.add_parser("spectrum", help="forward-model drop and bus spectra")))
    p.add_argument("--axis", type=float, nargs=3, metavar=("START", "STOP", "STEP"), default=(-5.0, 5.0, 0.01))
    p.add_argument("--no-sd", action="store_true", help="ignore spectral diffusion")
    p.add_argument("--ensemble-sd", action="store_true", help="average over emitter shifts instead of convolving")
    p.set_defaults(func=cmd_spectrum)

    p = with_params(sub.add_parser("saturation", help="dip extinction versus incident flux"))
    p.add_argument("--n-in", type=float, nargs=3, metavar=("START", "STOP", "NUM"), default=(0.0, 10.0, 51))
    p.add_argument("--critical", action="store_true", help="also root-find the broadened critical photon number")
    p.add_argument("--waveguide", action="store_true", help="same emitter in a bare waveguide, without Purcell enhancement")
    p.add_argument("--ensemble-sd", action="store_true")
    p.set_defaults(func=cmd_saturation)

    p = with_drive(with_params(sub.add_parser("routing", help="emitter-cavity detuning sweep with the laser on the cavity")))
    p.add_argument("--delta", type=float, nargs=3, metavar=("START", "STOP", "STEP"), default=(-40.0, 40.0, 1.0))
    p.add_argument("--sd-slope", type=float, help="sigma_sd slope (GHz per GHz of detuning)")
    p.add_argument("--sd-intercept", type=float, help="sigma_sd intercept (GHz)")
    p.set_defaults(func=cmd_routing)

    p = with_params(sub.add_parser("merit", help="Purcell factor, beta, g, C and Bell rates"))
    p.add_argument("--gamma-fast", type=float, default=4.97, help="ns^-1")
    p.add_argument("--gamma-bulk", type=float, default=0.63, help="ns^-1")
    p.add_argument("--kappa-ghz", type=float, default=36.6)
    p.add_argument("--q", type=float, default=8900.0, help="loaded Q for the ideal Purcell factor")
    p.add_argument("--v-eff", type=float, default=18.0, help="mode volume in (lambda/n)^3")
    p.add_argument("--wavelength-nm", type=float, default=940.0)
    p.add_argument("--n-index", type=float, default=3.5)
    p.add_argument("--qe-bulk", type=float, default=0.9)
    p.set_defaults(func=cmd_merit)

    p = sub.add_parser("fit-scan", help="Lorentzian fit of one resonance")
    p.add_argument("--scan", required=True)
    p.add_argument("--port", choices=("drop", "bus"), default="bus")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--neighbor", type=float, nargs=2, metavar=("LO", "HI"), help="subtract a neighbouring mode fitted in this window")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_scan)

    p = sub.add_parser("fit-lifetime", help="single or double exponential decay fit")
    p.add_argument("--data", required=True)
    p.add_argument("--order", choices=("single", "double"), default="single")
    p.add_argument("--no-poisson", action="store_true", help="unweighted residuals")
    p.add_argument("--gamma-bulk", type=float, help="bulk rate for the enhancement (ns^-1)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_lifetime)

    p = sub.add_parser("fit-multipower", help="simultaneous fit of spectra at several powers")
    p.add_argument("--data", required=True)
    p.add_argument("--params", help="initial parameters (JSON)")
    p.add_argument("--fixed", nargs="*", default=[])
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_multipower)

    p = sub.add_parser("fit-gap", help="coupling model fit to a gap series")
    p.add_argument("--data", required=True)
    p.add_argument("--init", type=float, nargs=4, metavar=("T_CC", "Q_INT", "KAPPA_G0", "XI"), default=(0.2, 2.0e4, 3.0, 0.015))
    p.add_argument("--order", help="fit only this mode order")
    p.add_argument("--fixed", nargs="*", default=[])
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_gap)

    p = sub.add_parser("modevolume", help="mode volume of a field grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--wavelength-nm", type=float, help="also report the volume in (lambda/n)^3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_modevolume)

    p = sub.add_parser("detect", help="find and fit resonances in a scan")
    p.add_argument("--scan", required=True)
    p.add_argument("--port", choices=("drop", "bus"), default="bus")
    p.add_argument("--prominence", type=float, default=0.1)
    p.add_argument("--window", type=float, help="normalize with this background half-width (GHz) first")
    p.add_argument("--fsr", type=float, nargs="*", help="candidate free spectral ranges (GHz)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_logging(args.verbose)
        return args.func(args)
    except RouterkitError as e:
        print(f"E:{e.exit_code}:{e.code}: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        print(f"E:2:input: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
