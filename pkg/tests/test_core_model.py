import json
import math

import pytest

from routerkit.core_model import (
    CavityParams,
    DriveParams,
    EmitterParams,
    SystemParams,
    f_factor,
    gamma_total,
    linewidth_from_rate,
    load_params,
    reference_params,
    params_from_dict,
    params_to_dict,
    rate_from_linewidth,
    save_params,
)
from routerkit.errors import DomainError, InputError, SingularParameterError


def _system(gamma_cav=4.34, gamma_leak=0.63, gamma_dp=0.0):
    return SystemParams(
        emitter=EmitterParams(gamma_bulk=0.63, gamma_leak=gamma_leak, gamma_dp=gamma_dp, omega_qd=0.0),
        cavity=CavityParams(kappa=rate_from_linewidth(36.6), omega_cav=0.0),
        gamma_cav=gamma_cav,
    )


def test_rate_from_linewidth_examples():
    assert rate_from_linewidth(0) == 0
    assert rate_from_linewidth(0.1) == pytest.approx(0.6283, abs=1e-4)
    assert rate_from_linewidth(36.6) == pytest.approx(229.96, abs=0.01)


def test_negative_linewidth_is_domain_error():
    with pytest.raises(DomainError):
        rate_from_linewidth(-0.1)
    with pytest.raises(DomainError):
        linewidth_from_rate(-1.0)


def test_f_factor_examples(reference):
    assert f_factor(reference) == pytest.approx(5.74, abs=0.01)
    assert f_factor(_system(gamma_cav=0.0)) == 0
    assert f_factor(_system(gamma_cav=0.63, gamma_leak=0.63)) == 1


def test_f_factor_singular_without_flag():
    p = _system(gamma_leak=0.0)
    with pytest.raises(SingularParameterError):
        f_factor(p)
    assert math.isinf(f_factor(p, ideal_limit=True))


def test_gamma_total_examples(reference):
    assert gamma_total(reference) == pytest.approx(4.97)
    assert gamma_total(_system(gamma_cav=0.0)) == 0.63
    assert gamma_total(_system(gamma_cav=0.63)) == pytest.approx(2 * 0.63)


def test_reference_params_detuning(reference):
    assert reference.delta == pytest.approx(0.02 * 36.6)
    assert linewidth_from_rate(reference.cavity.kappa) == pytest.approx(36.6)
    assert reference.sigma_sd == 0.6


def test_invalid_records_rejected():
    with pytest.raises(DomainError):
        CavityParams(kappa=0.0, omega_cav=0.0)
    with pytest.raises(DomainError):
        CavityParams(kappa=1.0, omega_cav=0.0, q_ratio=1.5)
    with pytest.raises(DomainError):
        EmitterParams(gamma_bulk=0.0, gamma_leak=0.1, gamma_dp=0.0, omega_qd=0.0)
    with pytest.raises(DomainError):
        DriveParams.flux(-1.0)
    with pytest.raises(DomainError):
        DriveParams(1.0, "power")


def test_updated_routes_flat_names(reference):
    p = reference.updated(gamma_cav=6.0, kappa=100.0, omega_qd=1.0, sigma_sd=0.0)
    assert p.gamma_cav == 6.0
    assert p.cavity.kappa == 100.0
    assert p.emitter.omega_qd == 1.0
    assert p.sigma_sd == 0.0
    assert reference.gamma_cav == 4.34
    with pytest.raises(DomainError):
        reference.updated(temperature=4.0)


def test_drive_params_views():
    assert DriveParams.saturation(1.5).S == 1.5
    assert DriveParams.saturation(1.5).n_in is None
    assert DriveParams.flux(1.4).n_in == 1.4
    assert DriveParams.flux(1.4).S is None


def test_params_file_round_trip(tmp_path, reference):
    path = tmp_path / "params.json"
    save_params(reference, path)
    loaded = load_params(path)
    assert params_to_dict(loaded) == pytest.approx(params_to_dict(reference))


def test_params_record_defaults():
    p = params_from_dict(
        {"gamma_bulk_ns": 0.63, "kappa_ghz": 36.6, "omega_qd_ghz": 0.0, "omega_cav_ghz": 0.0, "gamma_cav_ns": 4.34}
    )
    assert p.emitter.gamma_leak == 0.63
    assert p.emitter.gamma_dp == 0.0
    assert p.cavity.q_ratio == 1.0
    assert p.sigma_sd == 0.0


def test_params_record_rejects_unknown_and_missing_keys(tmp_path):
    record = params_to_dict(reference_params())
    with pytest.raises(InputError, match="unknown"):
        params_from_dict({**record, "temperature_k": 4.0})
    record.pop("kappa_ghz")
    with pytest.raises(InputError, match="missing"):
        params_from_dict(record)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(InputError):
        load_params(bad)


def test_params_record_invalid_value_is_input_error():
    record = params_to_dict(reference_params())
    record["q_ratio"] = 2.0
    with pytest.raises(InputError):
        params_from_dict(record)
