import numpy as np
import pytest

from routerkit.broadening import (
    SdModel,
    broadened_spectrum,
    convolve_spectrum,
    default_dip_axis,
    detuning_sweep,
    effective_critical_photon_number,
    fit_sd_model,
    gaussian_kernel,
    mode_difference,
    routing_metrics,
    saturation_curve,
    sd_at_detuning,
    waveguide_reference,
)
from routerkit.core_model import DriveParams
from routerkit.errors import AxisTooCoarseError, DomainError, PreconditionError, RouterkitWarning
from routerkit.scattering import RealSpectrum, bare_spectrum, spectrum


def test_kernel_is_unit_mass():
    k = gaussian_kernel(0.6, 0.05)
    assert np.all(k.weights >= 0)
    assert k.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert k.offsets[0] <= -5 * 0.6 and k.offsets[-1] >= 5 * 0.6
    shifted = gaussian_kernel(0.6, 0.05, center=0.3)
    assert np.sum(shifted.offsets * shifted.weights) == pytest.approx(0.3, abs=1e-6)


def test_convolve_zero_width_is_identity(reference):
    raw, _ = spectrum(np.linspace(-5, 5, 201), 0.0, reference)
    out = convolve_spectrum(raw, 0.0)
    np.testing.assert_array_equal(out.values, raw.values)
    np.testing.assert_array_equal(out.axis, raw.axis)


def test_convolve_flat_stays_flat():
    flat = RealSpectrum(np.linspace(-10, 10, 401), np.full(401, 0.7))
    np.testing.assert_allclose(convolve_spectrum(flat, 0.6).values, 0.7, rtol=1e-12)


def test_convolve_rejects_coarse_and_non_uniform_axes():
    coarse = RealSpectrum(np.linspace(-10, 10, 41), np.ones(41))
    with pytest.raises(AxisTooCoarseError):
        convolve_spectrum(coarse, 1.0)
    ragged = RealSpectrum(np.array([0.0, 0.1, 0.3, 0.35, 0.5]), np.ones(5))
    with pytest.raises(PreconditionError):
        convolve_spectrum(ragged, 1.0)
    with pytest.raises(DomainError):
        convolve_spectrum(coarse, -1.0)


def test_convolve_tiny_width_warns_and_passes_through():
    raw = RealSpectrum(np.linspace(0, 10, 11), np.arange(11.0))
    with pytest.warns(RouterkitWarning):
        out = convolve_spectrum(raw, 0.1)
    np.testing.assert_array_equal(out.values, raw.values)


def test_convolution_preserves_dip_area(reference):
    axis = np.arange(-1000.0, 1000.0 + 0.05, 0.1)
    p = reference.updated(sigma_sd=0.0)
    raw, _ = spectrum(axis, 0.0, p)
    bare, _ = bare_spectrum(axis, p)
    conv = convolve_spectrum(raw, 0.6)
    before = np.sum(raw.values - bare.values)
    after = np.sum(conv.values - bare.values)
    assert after == pytest.approx(before, rel=1e-3)


def test_far_detuning_untouched(reference):
    axis = np.arange(1500.0, 2500.0 + 0.05, 0.1)
    raw, _ = spectrum(axis, 0.0, reference.updated(sigma_sd=0.0))
    conv = convolve_spectrum(raw, 0.6)
    inner = (axis > 1510) & (axis < 2490)
    np.testing.assert_allclose(conv.values[inner], raw.values[inner], rtol=1e-6)


def test_gaussian_semigroup(reference):
    axis = np.arange(-30.0, 30.0 + 0.025, 0.05)
    raw, _ = spectrum(axis, 0.0, reference.updated(sigma_sd=0.0))
    twice = convolve_spectrum(convolve_spectrum(raw, 0.6), 0.8)
    once = convolve_spectrum(raw, 1.0)
    inner = np.abs(axis) < 20
    assert np.max(np.abs(twice.values[inner] - once.values[inner])) <= 0.01 * np.max(once.values)


def test_sd_model():
    flat = SdModel(slope=0.0, intercept=0.6)
    assert sd_at_detuning(flat, 12.0) == 0.6
    falling = SdModel(slope=-0.1, intercept=0.6)
    assert sd_at_detuning(falling, 10.0) == 0.0
    np.testing.assert_allclose(sd_at_detuning(falling, [0.0, 3.0]), [0.6, 0.3])
    fitted = fit_sd_model([-10.0, 0.0, 10.0, 20.0], [0.4, 0.6, 0.8, 1.0])
    assert fitted.slope == pytest.approx(0.02)
    assert sd_at_detuning(fitted, 0.732) == pytest.approx(0.6146, abs=1e-4)
    with pytest.raises(PreconditionError):
        fit_sd_model([1.0, 1.0], [0.5, 0.6])


def test_broadened_without_diffusion_is_exact(reference):
    p = reference.updated(sigma_sd=0.0)
    axis = np.linspace(-5, 5, 101)
    drop, bus = broadened_spectrum(axis, 1.5, p)
    raw_drop, raw_bus = spectrum(axis, 1.5, p)
    np.testing.assert_array_equal(drop.values, raw_drop.values)
    np.testing.assert_array_equal(bus.values, raw_bus.values)


def test_broadened_rejects_array_drive(reference):
    with pytest.raises(PreconditionError):
        broadened_spectrum(np.linspace(-1, 1, 5), np.ones(5), reference)
    with pytest.raises(DomainError):
        broadened_spectrum(np.linspace(-1, 1, 5), 0.0, reference, mode="voigt")


def test_broadened_extinction_reference_point(reference):
    metrics = routing_metrics(default_dip_axis(reference), 0.0, reference)
    assert -0.57 <= metrics.drop_extinction <= -0.49
    coarse = routing_metrics(default_dip_axis(reference, spacing=0.05), 0.0, reference)
    assert coarse.drop_extinction == pytest.approx(metrics.drop_extinction, abs=0.01)


def test_broadened_extinction_at_measured_power(reference):
    flux = routing_metrics(default_dip_axis(reference), DriveParams.flux(1.4), reference)
    assert -0.28 <= flux.drop_extinction <= -0.20


def test_uniform_saturation_ignores_power_broadening(reference):
    # n_c is smallest on the dip, so a flux drive saturates harder there than a uniform S
    axis = default_dip_axis(reference)
    unsaturated = routing_metrics(axis, 0.0, reference).drop_extinction
    uniform = routing_metrics(axis, 1.5, reference).drop_extinction
    flux = routing_metrics(axis, DriveParams.flux(1.4), reference).drop_extinction
    assert unsaturated < uniform < flux < 0


def test_more_diffusion_shrinks_the_dip(reference):
    depths = []
    for sigma in (0.0, 0.25, 0.5, 1.0, 2.0, 3.0):
        p = reference.updated(sigma_sd=sigma)
        depths.append(routing_metrics(default_dip_axis(p), 0.0, p).drop_extinction)
    assert np.all(np.diff(depths) > 0)


def test_bus_gain_is_positive_at_low_power(reference):
    metrics = routing_metrics(default_dip_axis(reference), 0.0, reference)
    assert metrics.bus_gain > 0
    assert abs(metrics.dip_detuning) < 1.0


def test_effective_critical_photon_number(reference):
    n_half = effective_critical_photon_number(reference)
    assert n_half == pytest.approx(0.94, abs=0.2)


def test_saturation_curve_erodes_dip(reference):
    curve = saturation_curve([0.0, 0.5, 2.0, 10.0], reference)
    assert np.all(np.diff(curve.drop_extinction) > 0)
    assert curve.drop_extinction[-1] > -0.1


def test_waveguide_reference_routes_weakly(reference):
    bare = waveguide_reference(reference)
    assert bare.gamma_cav == reference.emitter.gamma_bulk
    assert bare.cavity == reference.cavity
    guided = saturation_curve([0.0, 1.0, 10.0], reference, waveguide=True)
    assert -0.19 <= guided.drop_extinction[0] <= -0.11
    assert np.all(np.diff(guided.drop_extinction) > 0)
    cavity = saturation_curve([0.0], reference)
    assert cavity.drop_extinction[0] < guided.drop_extinction[0]


def test_mode_difference_is_small(reference):
    report = mode_difference(default_dip_axis(reference), 0.0, reference)
    assert report.extinction_convolution < 0 and report.extinction_ensemble < 0
    assert abs(report.extinction_convolution - report.extinction_ensemble) < 0.05
    assert report.max_abs_drop < 0.05


def test_detuning_sweep(reference):
    sweep = detuning_sweep([-40.0, 0.0, 40.0], 0.0, reference)
    assert sweep.drop_change[1] < -0.4
    assert abs(sweep.drop_change[0]) < 0.05 and abs(sweep.drop_change[2]) < 0.05
    assert sweep.bus_change[1] > 0
    np.testing.assert_array_equal(sweep.sigma_sd, [0.6, 0.6, 0.6])

    model = SdModel(slope=0.01, intercept=0.5)
    tracked = detuning_sweep([-10.0, 10.0], 0.0, reference, sd_model=model)
    np.testing.assert_allclose(tracked.sigma_sd, [0.4, 0.6])
