import math

import numpy as np
import pytest

from core.errors import ArgumentError, ConfigurationError, RescalingError
from core.spectral import (
    MultiplierProfile,
    TimeSignal,
    apply_Qphi,
    band_localize,
    band_localize_regularized,
    frequency_cutoff,
    gaussian_regularize,
    kernel_sigma,
    regularized_profile,
    regularized_tail_bound,
    required_padding,
    wraparound_mass,
)


def _periodic(func, n=64):
    t = 2.0 * np.pi * np.arange(n) / n
    return t, TimeSignal(func(t), 2.0 * np.pi / n, periodic=True)


def test_gaussian_scales_a_periodic_tone():
    t, signal = _periodic(lambda t: np.cos(3.0 * t))
    out = gaussian_regularize(signal, 10.0).values
    assert np.allclose(out, math.exp(-9.0 / 10.0) * np.cos(3.0 * t), atol=1e-12)


def test_gaussians_compose():
    _, signal = _periodic(lambda t: np.cos(2.0 * t) + 0.5 * np.sin(7.0 * t))
    twice = gaussian_regularize(gaussian_regularize(signal, 50.0), 50.0).values
    once = gaussian_regularize(signal, 25.0).values
    assert np.allclose(twice, once, atol=1e-12)


def test_short_padding_is_refused():
    t = 0.01 * np.arange(100)
    signal = TimeSignal(np.sin(t), 0.01)
    assert wraparound_mass(signal, 200.0) > 1e-10
    with pytest.raises(ConfigurationError) as info:
        gaussian_regularize(signal, 200.0)
    assert info.value.context["required_pad"] == required_padding(200.0, 0.01)


def test_padded_gaussian_matches_kernel_quadrature():
    lam, dt, n = 200.0, 0.01, 200
    t = dt * np.arange(n)
    u = np.sin(5.0 * t) + t
    signal = TimeSignal(u, dt, pad=required_padding(lam, dt))
    assert wraparound_mass(signal, lam) <= 1e-10
    out = gaussian_regularize(signal, lam).values
    lag = t[:, None] - t[None, :]
    kernel = math.sqrt(lam / (4.0 * math.pi)) * np.exp(-lam * lag**2 / 4.0)
    direct = dt * kernel @ u
    assert np.max(np.abs(out - direct)) < 1e-8 * np.max(np.abs(u))


def test_kernel_sigma():
    assert kernel_sigma(2.0) == pytest.approx(1.0)
    assert required_padding(2.0, 0.5) == 16


def test_band_localize_keeps_plateau_and_drops_outside_support():
    t, signal = _periodic(lambda t: np.cos(2.0 * t) + np.cos(10.0 * t))
    out = band_localize(signal, 4.0).values
    assert np.allclose(out, np.cos(2.0 * t), atol=1e-12)


def test_frequency_cutoff_is_sharp():
    t, signal = _periodic(lambda t: np.cos(2.0 * t) + np.cos(6.0 * t))
    out = frequency_cutoff(signal, 5.0).values
    assert np.allclose(out, np.cos(2.0 * t), atol=1e-12)


def test_profile_shape():
    profile = MultiplierProfile()
    assert np.all(profile(np.array([0.0, 0.5, 0.75])) == 1.0)
    assert np.all(profile(np.array([1.0, 1.5, -2.0])) == 0.0)
    values = profile(np.linspace(0.75, 1.0, 50))
    assert np.all(np.diff(values) <= 0.0)
    with pytest.raises(ArgumentError):
        MultiplierProfile(plateau=1.0, support=0.5)


def test_regularized_profile_respects_tail_bound():
    smoothed = regularized_profile(MultiplierProfile(), 100.0)
    for s in (1.2, 1.5, -1.3):
        assert float(smoothed(s)) <= float(regularized_tail_bound(s, 100.0)) + 1e-12
    assert float(smoothed(0.0)) == pytest.approx(1.0, abs=1e-6)


def test_regularized_band_localize_runs_on_columns():
    t, signal = _periodic(lambda t: np.stack([np.cos(t), np.cos(12.0 * t)], axis=1))
    out = band_localize_regularized(signal, 4.0, 400.0).values
    assert out.shape == (64, 2)
    assert np.allclose(out[:, 0], np.cos(t), atol=1e-6)
    assert np.max(np.abs(out[:, 1])) < 1e-6


def test_apply_qphi_matches_weight_then_smooth():
    n = 64
    t = 2.0 * np.pi * np.arange(n) / n
    values = np.stack([np.cos(t), np.sin(2.0 * t), np.ones(n)], axis=1)
    phi = np.array([0.1, -0.2, 0.3])
    signal = TimeSignal(values, t[1], periodic=True)
    tau, delta = 2.0, 0.5
    out = apply_Qphi(signal, tau, delta, phi).values
    expected = gaussian_regularize(signal.with_values(values * np.exp(tau * phi)[None, :]), 2.0 * tau / delta).values
    assert np.allclose(out, expected, atol=1e-12)


def test_apply_qphi_guards_overflow():
    signal = TimeSignal(np.ones((8, 2)), 0.1, periodic=True)
    with pytest.raises(RescalingError):
        apply_Qphi(signal, 1000.0, 1.0, np.array([1.0, 0.5]))


def test_apply_qphi_checks_weight_shape():
    signal = TimeSignal(np.ones((8, 2)), 0.1, periodic=True)
    with pytest.raises(ArgumentError):
        apply_Qphi(signal, 1.0, 1.0, np.ones(3))


def test_time_signal_validation():
    with pytest.raises(ArgumentError):
        TimeSignal(np.ones(4), 0.0)
    with pytest.raises(ArgumentError):
        TimeSignal(np.ones(4), 0.1, pad=-1)
