import math

import numpy as np
import pytest

from routerkit.coupling import (
    CouplingModel,
    GapSeries,
    critical_gap,
    delta_t,
    fit_gap_series,
    kappa_g,
    loaded_q,
    monte_carlo_recovery,
    synthesize_gap_series,
)
from routerkit.errors import DomainError, PreconditionError, RankError
from routerkit.manager import JobManager

TRUTH = CouplingModel(t_cc=0.1, q_int=2.3e4, kappa_g0=math.exp(1.28), xi=0.02)
INIT = CouplingModel(t_cc=0.2, q_int=2e4, kappa_g0=3.0, xi=0.015)
GAPS = np.arange(40.0, 161.0, 30.0)


def test_forward_model():
    assert kappa_g(TRUTH, 0.0) == pytest.approx(TRUTH.kappa_g0)
    assert critical_gap(TRUTH) == pytest.approx(64.0)
    assert kappa_g(TRUTH, 64.0) == pytest.approx(1.0)
    assert delta_t(TRUTH, 64.0) == pytest.approx(1 - TRUTH.t_cc)
    assert loaded_q(TRUTH, 64.0) == pytest.approx(TRUTH.q_int / 2)
    # far from the disk the dip vanishes into the intrinsic level
    assert delta_t(TRUTH, 1e4) == pytest.approx(0.0, abs=1e-9)
    assert loaded_q(TRUTH, 1e4) == pytest.approx(TRUTH.q_int)
    dt = delta_t(TRUTH, GAPS)
    assert dt.shape == GAPS.shape
    with pytest.raises(DomainError):
        kappa_g(TRUTH, -1.0)


def test_critical_gap_not_reached():
    weak = CouplingModel(t_cc=0.0, q_int=1e4, kappa_g0=0.9, xi=0.02)
    assert critical_gap(weak) is None
    assert np.all(np.diff(delta_t(weak, GAPS)) < 0)


def test_model_validation():
    with pytest.raises(DomainError):
        CouplingModel(t_cc=1.5, q_int=1e4, kappa_g0=1.0, xi=0.02)
    with pytest.raises(DomainError):
        CouplingModel(t_cc=0.1, q_int=1e4, kappa_g0=1.0, xi=0.0)


def test_noiseless_recovery():
    fit = fit_gap_series(synthesize_gap_series(TRUTH, GAPS), INIT)
    assert fit.result.converged
    for name in ("t_cc", "q_int", "kappa_g0", "xi"):
        assert getattr(fit.model, name) == pytest.approx(getattr(TRUTH, name), rel=1e-4)
    assert fit.critical_gap == pytest.approx(64.0, rel=1e-4)
    assert fit.covariance.shape == (4, 4)


def test_fixed_parameter_is_held():
    data = synthesize_gap_series(TRUTH, GAPS)
    fit = fit_gap_series(data, CouplingModel(0.1, 2e4, 3.0, 0.015), fixed=("t_cc",))
    assert fit.model.t_cc == 0.1
    assert fit.result.sigmas["t_cc"] == 0.0
    assert fit.model.q_int == pytest.approx(TRUTH.q_int, rel=1e-4)
    with pytest.raises(PreconditionError, match="unknown"):
        fit_gap_series(data, INIT, fixed=("t_c",))


def test_too_few_gaps_is_rank_error():
    data = synthesize_gap_series(TRUTH, GAPS[:3])
    with pytest.raises(RankError):
        fit_gap_series(data, INIT)


def test_gap_series_validation():
    with pytest.raises(PreconditionError):
        GapSeries(gap=[40.0, 40.0, 70.0], delta_t=[0.8, 0.8, 0.9], q=[1e4, 1e4, 1.2e4])
    with pytest.raises(PreconditionError):
        GapSeries(gap=[40.0, 70.0], delta_t=[0.8, 1.2], q=[1e4, 1.2e4])
    with pytest.raises(PreconditionError):
        GapSeries(gap=[40.0, 70.0], delta_t=[0.8, 0.9], q=[1e4, 1.2e4], q_err=[1.0])
    # the same gap may appear once per mode order
    GapSeries(gap=[40.0, 40.0], delta_t=[0.8, 0.7], q=[1e4, 9e3], mode_order=("TE1", "TE2"))


def test_select_order():
    data = GapSeries(
        gap=[40.0, 70.0, 40.0],
        delta_t=[0.8, 0.9, 0.5],
        q=[1e4, 1.2e4, 8e3],
        mode_order=("TE1", "TE1", "TE2"),
    )
    te1 = data.select_order("TE1")
    np.testing.assert_array_equal(te1.gap, [40.0, 70.0])
    assert te1.mode_order == ("TE1", "TE1")
    with pytest.raises(PreconditionError):
        data.select_order("TM1")
    with pytest.raises(PreconditionError):
        synthesize_gap_series(TRUTH, GAPS).select_order("TE1")


def test_noise_is_seeded():
    a = synthesize_gap_series(TRUTH, GAPS, noise=0.05, rng=np.random.default_rng(7))
    b = synthesize_gap_series(TRUTH, GAPS, noise=0.05, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(a.q, b.q)
    assert np.all((a.delta_t >= 0) & (a.delta_t <= 1))


def test_monte_carlo_recovery():
    rows = monte_carlo_recovery(TRUTH, GAPS, INIT, noise=0.05, trials=100, seed=3, manager=JobManager(max_workers=4))
    assert rows.shape == (100, 2)
    assert np.median(rows[:, 0]) == pytest.approx(TRUTH.q_int, rel=0.1)
    assert np.nanmedian(rows[:, 1]) == pytest.approx(64.0, abs=10.0)
