import logging
import re

import numpy as np
import pytest

from routerkit.broadening import broadened_spectrum
from routerkit.errors import DegeneracyWarning, DetectionError, ModelEvaluationError, PreconditionError, RouterkitWarning
from routerkit.fitkit import (
    SHARED_PARAMETERS,
    DataSeries,
    FitProblem,
    Parameter,
    PowerSeries,
    fit_lifetime,
    fit_lorentzian,
    fit_multipower,
    fit_with_restarts,
    least_squares,
    lorentzian,
    lorentzian_jacobian,
    multistart,
    numeric_jacobian,
    peak_lorentzian,
    subtract_second_cavity,
)
from routerkit.manager import JobManager


def _rosenbrock():
    return FitProblem(
        model_id="rosenbrock",
        series=(DataSeries([0.0, 1.0], [0.0, 1.0]),),
        parameters=(Parameter("a", -1.2), Parameter("b", 1.0)),
        model=lambda v, k: np.array([-10.0 * (v["b"] - v["a"] ** 2), v["a"]]),
    )


def test_linear_fit_matches_polyfit(rng):
    x = np.linspace(0, 10, 50)
    y = 2.5 * x - 1.0 + 0.1 * rng.standard_normal(x.size)
    problem = FitProblem(
        model_id="line",
        series=(DataSeries(x, y),),
        parameters=(Parameter("slope", 1.0), Parameter("intercept", 0.0, scale=1.0)),
        model=lambda v, k: v["slope"] * x + v["intercept"],
    )
    result = least_squares(problem)
    slope, intercept = np.polyfit(x, y, 1)
    assert result.converged
    assert result.values["slope"] == pytest.approx(slope, rel=1e-6)
    assert result.values["intercept"] == pytest.approx(intercept, abs=1e-6)
    assert result.chi2_red == pytest.approx(np.sum((y - slope * x - intercept) ** 2) / 48, rel=1e-6)
    assert 0 < result.sigmas["slope"] < 0.01


def test_rosenbrock_converges():
    result = least_squares(_rosenbrock())
    assert result.converged
    assert result.values["a"] == pytest.approx(1.0, abs=1e-6)
    assert result.values["b"] == pytest.approx(1.0, abs=1e-6)


def test_accepted_costs_decrease(caplog):
    caplog.set_level(logging.DEBUG, logger="routerkit.fitkit")
    least_squares(_rosenbrock())
    costs = [
        float(m.group(1))
        for m in (re.search(r"iter \d+: cost (\S+)", r.getMessage()) for r in caplog.records)
        if m is not None
    ]
    assert len(costs) > 3
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert costs[-1] < costs[0]


def test_bounds_are_respected():
    x = np.linspace(0, 1, 20)
    problem = FitProblem(
        model_id="bounded",
        series=(DataSeries(x, -3.0 * x),),
        parameters=(Parameter("slope", 1.0, 0.0, 5.0),),
        model=lambda v, k: v["slope"] * x,
    )
    result = least_squares(problem)
    assert result.values["slope"] == 0.0
    assert result.status == "converged"


def test_problem_validation():
    series = (DataSeries([0.0, 1.0], [0.0, 1.0]),)
    with pytest.raises(PreconditionError):
        FitProblem("p", series, (Parameter("a", 2.0, 0.0, 1.0),), lambda v, k: v["a"])
    with pytest.raises(PreconditionError):
        FitProblem("p", series, (Parameter("a", 0.5, fixed=True),), lambda v, k: v["a"])
    with pytest.raises(PreconditionError):
        FitProblem("p", series, (Parameter("a", 0.5), Parameter("a", 0.1)), lambda v, k: v["a"])
    with pytest.raises(PreconditionError):
        DataSeries([0.0, 1.0], [0.0])
    with pytest.raises(PreconditionError):
        DataSeries([0.0, 1.0], [0.0, 1.0], sigma=[1.0, 0.0])


def test_non_finite_model_is_evaluation_error():
    problem = FitProblem(
        model_id="nan",
        series=(DataSeries([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]),),
        parameters=(Parameter("a", 1.0),),
        model=lambda v, k: np.full(3, np.nan),
    )
    with pytest.raises(ModelEvaluationError):
        least_squares(problem)


def test_redundant_parameters_retry_then_report_singular(caplog):
    caplog.set_level(logging.DEBUG, logger="routerkit.fitkit")
    x = np.linspace(0, 1, 10)
    problem = FitProblem(
        model_id="redundant",
        series=(DataSeries(x, 2.0 * x),),
        parameters=(Parameter("a", 0.5), Parameter("b", 0.5)),
        model=lambda v, k: (v["a"] + v["b"]) * x,
    )
    result = fit_with_restarts(problem, attempts=3)
    assert result.status == "singular"
    assert sum("restart" in r.getMessage() for r in caplog.records) == 2
    assert result.values["a"] + result.values["b"] == pytest.approx(2.0, rel=1e-6)


def test_kink_without_descent_reports_stalled():
    x = np.linspace(0, 1, 3)
    problem = FitProblem(
        model_id="kink",
        series=(DataSeries(x, np.zeros(3)),),
        parameters=(Parameter("a", 0.0, scale=1.0),),
        model=lambda v, k: np.full(3, max(v["a"], -3.0 * v["a"]) + 1.0),
    )
    result = least_squares(problem)
    assert result.status == "stalled"
    assert not result.converged
    assert result.values["a"] == 0.0
    assert result.to_report()["status"] == "stalled"


def test_multistart_keeps_best():
    x = np.linspace(0, 10, 30)
    y = 2.5 * x - 1.0
    problem = FitProblem(
        model_id="line",
        series=(DataSeries(x, y),),
        parameters=(Parameter("slope", 1.0), Parameter("intercept", 0.0, scale=1.0)),
        model=lambda v, k: v["slope"] * x + v["intercept"],
    )
    best = multistart(problem, starts=4, seed=5, manager=JobManager(max_workers=2))
    assert best.values["slope"] == pytest.approx(2.5, rel=1e-8)
    with pytest.raises(PreconditionError):
        multistart(problem, starts=0)


def test_report_structure():
    result = least_squares(_rosenbrock())
    report = result.to_report({"critical_gap_nm": 64.0, "note": "x"})
    assert set(report) == {"model", "params", "chi2_red", "status", "n_iter", "extra"}
    assert [p["name"] for p in report["params"]] == ["a", "b"]
    assert all(set(p) == {"name", "value", "sigma", "fixed"} for p in report["params"])
    # two points, two parameters: no degrees of freedom left
    assert report["chi2_red"] is None
    assert report["extra"] == {"critical_gap_nm": 64.0, "note": "x"}


# Lorentzian


def test_lorentzian_jacobian_matches_finite_differences():
    x = np.linspace(-5, 5, 41)
    theta = np.array([0.3, 2.0, 0.5, 1.2])
    analytic = lorentzian_jacobian(x, *theta)
    numeric = numeric_jacobian(lambda v: lorentzian(x, *v), theta)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_fit_lorentzian_recovers_q():
    x = np.arange(318800.0, 319200.0, 0.5)
    y = lorentzian(x, 319000.0, 31.9, 0.6, 1.0)
    fit = fit_lorentzian(DataSeries(x, y))
    assert fit.q == pytest.approx(1e4, rel=1e-6)
    assert fit.center == pytest.approx(319000.0, abs=1e-4)
    assert fit.delta_t == pytest.approx(0.6, rel=1e-6)


def test_fit_lorentzian_noisy(rng):
    x = np.arange(318800.0, 319200.0, 1.0)
    y = lorentzian(x, 319000.0, 31.9, 0.5, 1.0) + 0.01 * rng.standard_normal(x.size)
    fit = fit_lorentzian(DataSeries(x, y))
    assert fit.q == pytest.approx(1e4, rel=0.1)
    assert fit.result.sigmas["fwhm"] > 0


def test_fit_lorentzian_peak():
    x = np.linspace(-10, 10, 201)
    fit = fit_lorentzian(DataSeries(x + 1000.0, lorentzian(x, 1.0, 2.0, -0.8, 0.5)))
    assert fit.depth == pytest.approx(-0.8, rel=1e-6)
    assert fit.center == pytest.approx(1001.0, abs=1e-6)


def test_fit_lorentzian_flat_series():
    with pytest.raises(DetectionError):
        fit_lorentzian(DataSeries(np.arange(20.0), np.full(20, 3.0)))
    with pytest.raises(DetectionError):
        fit_lorentzian(DataSeries(np.arange(3.0), [1.0, 0.5, 1.0]))


# Lifetimes


def _decay_counts(t, amplitudes, rates, background):
    y = np.full(t.shape, float(background))
    after = t >= 0
    for a, g in zip(amplitudes, rates):
        y[after] += a * np.exp(-g * t[after])
    return y


def test_single_exponential():
    t = np.linspace(-2.0, 20.0, 1101)
    counts = _decay_counts(t, [1e4], [0.63], 10.0)
    model = fit_lifetime(t, counts)
    assert model.rates[0] == pytest.approx(0.63, rel=1e-4)
    assert model.background == pytest.approx(10.0, rel=1e-3)
    assert model.t0 == pytest.approx(0.0, abs=0.03)
    np.testing.assert_allclose(model.evaluate(t[t > 0.1]), counts[t > 0.1], rtol=1e-3)


def test_single_exponential_poisson_noise(rng):
    t = np.linspace(0.0, 15.0, 751)
    counts = rng.poisson(_decay_counts(t, [5e3], [0.63], 20.0)).astype(float)
    model = fit_lifetime(t, counts, seed=2)
    assert model.rates[0] == pytest.approx(0.63, rel=0.05)


def test_double_exponential_sorted_fast_first():
    t = np.linspace(0.0, 15.0, 1501)
    counts = _decay_counts(t, [1e5, 2e4], [4.97, 0.83], 5.0)
    model = fit_lifetime(t, counts, order="double")
    assert model.rates[0] == pytest.approx(4.97, rel=1e-3)
    assert model.rates[1] == pytest.approx(0.83, rel=1e-3)
    assert model.amplitudes[0] == pytest.approx(1e5, rel=1e-3)


def test_lifetime_degeneracy_warnings():
    t = np.linspace(0.0, 10.0, 201)
    with pytest.warns(DegeneracyWarning):
        fit_lifetime(t, np.full(t.size, 100.0))
    with pytest.warns(DegeneracyWarning):
        fit_lifetime(t, _decay_counts(t, [1e4], [0.63], 10.0), order="double")


def test_lifetime_input_checks():
    t = np.linspace(0.0, 1.0, 5)
    with pytest.raises(PreconditionError):
        fit_lifetime(t, np.ones(5), order="triple")
    with pytest.raises(PreconditionError):
        fit_lifetime(t, np.ones(4))
    with pytest.raises(PreconditionError):
        fit_lifetime(t, -np.ones(5))
    with pytest.raises(PreconditionError):
        fit_lifetime(t, np.array([1.0, 2.0, 3.0, 4.0, 5.0]))


# Multi-power spectra

SATURATIONS = (0.3, 0.8, 1.5, 3.0, 6.0)
FREQ = np.arange(-20.0, 20.05, 0.1)


def _power_series(truth, saturations=SATURATIONS, eta=0.9):
    p = truth.updated(eta=eta)
    out = []
    for k, S in enumerate(saturations):
        drop, bus = broadened_spectrum(FREQ - p.emitter.omega_qd, S, p)
        out.append(PowerSeries(power_uw=float(k + 1), freq=FREQ, drop=drop.values, bus=bus.values))
    return out


def test_multipower_recovers_shared_and_per_power(reference):
    series = _power_series(reference)
    p0 = reference.updated(omega_qd=0.7, sigma_sd=0.5)
    fit = fit_multipower(
        series,
        p0,
        saturations=[1.1 * S for S in SATURATIONS],
        etas=[1.0] * len(SATURATIONS),
        fixed=("kappa_ghz",),
        starts=2,
        seed=1,
        manager=JobManager(max_workers=2),
    )
    np.testing.assert_allclose(fit.saturations, SATURATIONS, rtol=1e-3)
    np.testing.assert_allclose(fit.etas, 0.9, rtol=1e-3)
    assert fit.params.sigma_sd == pytest.approx(0.6, abs=1e-3)
    assert fit.params.delta == pytest.approx(reference.delta, abs=1e-3)
    assert fit.params.emitter.omega_qd == pytest.approx(reference.emitter.omega_qd, abs=1e-3)
    assert fit.params.cavity.eta == 1.0
    assert fit.low_power_extinction() < -0.4


def test_multipower_single_series_needs_fixed_shared(reference):
    series = _power_series(reference, saturations=(1.5,), eta=1.0)
    with pytest.raises(PreconditionError):
        fit_multipower(series, reference)
    fit = fit_multipower(series, reference, saturations=[1.0], fixed=SHARED_PARAMETERS + ("eta",), starts=1)
    assert fit.saturations[0] == pytest.approx(1.5, rel=1e-4)
    assert fit.etas == (1.0,)
    with pytest.raises(PreconditionError, match="unknown"):
        fit_multipower(_power_series(reference), reference, fixed=("kappa",), starts=1)


def test_multipower_identical_powers_warn(reference):
    twins = [
        PowerSeries(power_uw=1.0, freq=s.freq, drop=s.drop, bus=s.bus)
        for s in _power_series(reference, saturations=(1.0, 1.0), eta=1.0)
    ]
    with pytest.warns(RouterkitWarning, match="identical"):
        fit_multipower(twins, reference, saturations=[0.8, 0.8], fixed=SHARED_PARAMETERS + ("eta",), starts=1)


def test_power_series_validation():
    with pytest.raises(PreconditionError):
        PowerSeries(power_uw=1.0, freq=[0.0, 1.0])
    with pytest.raises(PreconditionError):
        PowerSeries(power_uw=1.0, freq=[1.0, 0.0], drop=[1.0, 1.0])
    with pytest.raises(PreconditionError):
        PowerSeries(power_uw=1.0, freq=[0.0, 1.0], drop=[1.0])


# Neighbouring cavity mode


def test_subtract_second_cavity():
    x = np.linspace(-100.0, 100.0, 2001)
    primary = 0.1 + 1.0 * peak_lorentzian(x, -30.0, 8.0)
    y = primary + 0.6 * peak_lorentzian(x, 40.0, 10.0)
    out = subtract_second_cavity(DataSeries(x, y), (-60.0, 0.0), (10.0, 70.0), normalize=False)
    assert not out.passthrough
    assert out.neighbor_center == pytest.approx(40.0, abs=1e-3)
    assert out.neighbor_fwhm == pytest.approx(10.0, rel=1e-3)
    assert np.max(np.abs(out.cleaned.y - primary)) < 0.01 * 1.1

    normalized = subtract_second_cavity(DataSeries(x, y), (-60.0, 0.0), (10.0, 70.0))
    assert np.max(normalized.cleaned.y) == pytest.approx(1.0, abs=0.01)
    np.testing.assert_allclose(normalized.cleaned.y, primary / 1.1, atol=0.01)
    near_neighbor = np.abs(x - 40.0) < 5.0
    assert np.max(normalized.cleaned.y[near_neighbor]) < 0.15


def test_subtract_without_neighbor_passes_through():
    x = np.concatenate([np.linspace(-0.05, 0.05, 201), np.linspace(0.2, 1.0, 50)])
    y = np.where(x < 0.1, 0.2 + peak_lorentzian(x, 0.0, 0.002), 0.2)
    out = subtract_second_cavity(DataSeries(x, y), (-0.05, 0.05), (0.3, 0.9))
    assert out.passthrough is False
    np.testing.assert_array_equal(out.cleaned.y, y)
    assert out.neighbor_amplitude == 0.0


def test_subtract_window_checks():
    x = np.linspace(0.0, 10.0, 101)
    series = DataSeries(x, np.ones(101))
    with pytest.raises(PreconditionError, match="overlap"):
        subtract_second_cavity(series, (0.0, 5.0), (4.0, 9.0))
    with pytest.raises(PreconditionError):
        subtract_second_cavity(series, (0.0, 5.0), (9.9, 9.95))
