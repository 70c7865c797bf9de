"""Fourier multipliers along the time axis.

Signals keep time on axis 0; any trailing axes (spatial nodes) ride along.
Non-periodic signals are zero-padded to a power of two and the Gaussian
smoothing audits how much kernel mass wraps around the padded window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import erfc

from .errors import ArgumentError, ConfigurationError, RescalingError

logger = logging.getLogger(__name__)

WRAPAROUND_TOLERANCE = 1e-10
OVERFLOW_EXPONENT = 700.0
_PROFILE_SIGMA_FLOOR = 2.0**-14


@dataclass(frozen=True)
class TimeSignal:
    values: np.ndarray
    dt: float
    pad: int = 0
    periodic: bool = False

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ArgumentError("sample spacing must be positive", dt=self.dt)
        if self.pad < 0:
            raise ArgumentError("padding must be nonnegative", pad=self.pad)
        if np.ndim(self.values) == 0 or np.shape(self.values)[0] == 0:
            raise ArgumentError("time signal needs at least one sample")

    @property
    def samples(self) -> int:
        return int(np.shape(self.values)[0])

    @property
    def window(self) -> int:
        if self.periodic:
            return self.samples
        return 1 << max(0, int(math.ceil(math.log2(self.samples + self.pad))))

    def frequencies(self) -> np.ndarray:
        """Angular frequencies of the padded window."""
        return 2.0 * np.pi * np.fft.fftfreq(self.window, self.dt)

    def with_values(self, values: np.ndarray) -> "TimeSignal":
        return replace(self, values=values)

    @classmethod
    def sampled(cls, func, t: np.ndarray, *, pad: int = 0, periodic: bool = False) -> "TimeSignal":
        t = np.asarray(t, dtype=float)
        return cls(np.asarray(func(t)), float(t[1] - t[0]), pad=pad, periodic=periodic)


def _apply_multiplier(signal: TimeSignal, multiplier: np.ndarray) -> TimeSignal:
    values = np.asarray(signal.values)
    n = signal.window
    spectrum = np.fft.fft(values, n=n, axis=0)
    shape = (n,) + (1,) * (values.ndim - 1)
    out = np.fft.ifft(spectrum * multiplier.reshape(shape), axis=0)[: signal.samples]
    if not np.iscomplexobj(values):
        out = out.real
    return signal.with_values(out)


def kernel_sigma(lam: float) -> float:
    """Standard deviation of the time kernel of e^{-ξ²/λ}."""
    return math.sqrt(2.0 / lam)


def required_padding(lam: float, dt: float) -> int:
    return int(math.ceil(8.0 * kernel_sigma(lam) / dt))


def wraparound_mass(signal: TimeSignal, lam: float) -> float:
    if signal.periodic:
        return 0.0
    gap = signal.window - signal.samples + 1
    return float(0.5 * erfc(gap * signal.dt / (math.sqrt(2.0) * kernel_sigma(lam))))


def gaussian_regularize(signal: TimeSignal, lam: float) -> TimeSignal:
    if not lam > 0:
        raise ArgumentError("regularization parameter must be positive", lam=lam)
    leak = wraparound_mass(signal, lam)
    if leak > WRAPAROUND_TOLERANCE:
        raise ConfigurationError(
            "padding too short for the Gaussian kernel",
            wraparound=leak,
            pad=signal.pad,
            required_pad=required_padding(lam, signal.dt),
        )
    xi = signal.frequencies()
    return _apply_multiplier(signal, np.exp(-(xi * xi) / lam))


def _smooth_step(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class MultiplierProfile:
    """Even cutoff equal to 1 on the plateau and 0 beyond the support radius."""

    plateau: float = 0.75
    support: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.plateau < self.support:
            raise ArgumentError("profile needs 0 < plateau < support")

    def __call__(self, s: np.ndarray) -> np.ndarray:
        x = (np.abs(np.asarray(s, dtype=float)) - self.plateau) / (self.support - self.plateau)
        return 1.0 - _smooth_step(x)

    def sample(self, count: int = 1025, extent: float = 1.25):
        s = np.linspace(-extent * self.support, extent * self.support, count)
        return s, self(s)

    def derivative_bound(self, count: int = 1 << 14) -> float:
        s, m = self.sample(count)
        return float(np.max(np.abs(np.diff(m) / np.diff(s))))

    def rows(self, count: int = 257):
        s, m = self.sample(count)
        for a, b in zip(s, m):
            yield float(a), float(b)


@lru_cache(maxsize=32)
def _regularized_profile(profile: MultiplierProfile, lam: float):
    sigma = kernel_sigma(lam)
    ds = min(sigma / 8.0, 1.0 / 512.0)
    half = profile.support + 8.0 * sigma + ds
    s = np.arange(-half, half + 0.5 * ds, ds)
    signal = TimeSignal(profile(s), ds, pad=required_padding(lam, ds))
    smoothed = gaussian_regularize(signal, lam).values
    logger.debug("Regularized profile: lambda=%.3g, %d samples", lam, s.size)
    return s, smoothed


def regularized_profile(profile: MultiplierProfile, lam: float):
    """The smoothed cutoff as a callable on the profile variable."""
    if not lam > 0:
        raise ArgumentError("regularization parameter must be positive", lam=lam)
    if kernel_sigma(lam) < _PROFILE_SIGMA_FLOOR:
        return profile
    s, smoothed = _regularized_profile(profile, float(lam))
    return lambda x: np.interp(np.asarray(x, dtype=float), s, smoothed, left=0.0, right=0.0)


def regularized_tail_bound(s: np.ndarray | float, lam: float, profile: MultiplierProfile = MultiplierProfile()):
    """Upper bound for the smoothed cutoff outside the support: the Gaussian mass beyond the gap."""
    gap = np.maximum(np.abs(np.asarray(s, dtype=float)) - profile.support, 0.0)
    return 0.5 * erfc(gap * math.sqrt(lam) / 2.0)


def band_localize(signal: TimeSignal, mu: float, profile: MultiplierProfile = MultiplierProfile()) -> TimeSignal:
    if not mu > 0:
        raise ArgumentError("band parameter must be positive", mu=mu)
    return _apply_multiplier(signal, profile(signal.frequencies() / mu))


def band_localize_regularized(
    signal: TimeSignal, mu: float, lam: float, profile: MultiplierProfile = MultiplierProfile()
) -> TimeSignal:
    if not mu > 0:
        raise ArgumentError("band parameter must be positive", mu=mu)
    smoothed = regularized_profile(profile, lam)
    return _apply_multiplier(signal, np.asarray(smoothed(signal.frequencies() / mu)))


def frequency_cutoff(signal: TimeSignal, cutoff: float) -> TimeSignal:
    """Sharp projection onto |ξ_t| ≤ cutoff."""
    if not cutoff > 0:
        raise ArgumentError("cutoff must be positive", cutoff=cutoff)
    xi = signal.frequencies()
    return _apply_multiplier(signal, (np.abs(xi) <= cutoff).astype(float))


def apply_Qphi(signal: TimeSignal, tau: float, delta: float, phi_values: np.ndarray) -> TimeSignal:
    """Multiply by e^{τφ}, then smooth in time with λ = 2τ/δ.

    ``phi_values`` is either spatial (one value per node) or space-time
    (same shape as the signal) for weights that depend on time.
    """
    if not tau > 0 or not delta > 0:
        raise ArgumentError("tau and delta must be positive", tau=tau, delta=delta)
    phi = np.asarray(phi_values, dtype=float)
    values = np.asarray(signal.values)
    if phi.shape == values.shape[1:]:
        phi = phi[None, ...]
    elif phi.shape != values.shape:
        raise ArgumentError("weight must match the spatial shape of the signal", expected=list(values.shape[1:]))
    exponent = tau * float(np.max(phi)) if phi.size else 0.0
    if exponent > OVERFLOW_EXPONENT:
        raise RescalingError(
            "weight exponent overflows double precision",
            exponent=exponent,
            advice="shift the weight by its maximum or lower tau",
        )
    weighted = signal.with_values(values * np.exp(tau * phi))
    return gaussian_regularize(weighted, 2.0 * tau / delta)
