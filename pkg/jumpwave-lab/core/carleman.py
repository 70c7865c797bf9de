"""Carleman weights, microlocal regions, and quadrature checks of the interface estimate.

Local coordinates are flat: the interface is the hyperplane x[0] = center x0[0],
x_n = x[0] − x0[0] is the normal coordinate (positive in Ω+) and the remaining
axes are tangential. The tangential form is Q(x, ξ′) = b(x)|ξ′|².
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .elliptic import assemble
from .errors import AmbiguityError, ArgumentError, ConfigurationError, GeometryError, RegionError
from .grid import Grid
from .medium import MediumSpec, Side
from .spectral import TimeSignal, apply_Qphi, required_padding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CarlemanWeight:
    alpha_minus: float
    alpha_plus: float
    beta: float
    convexification: float = 0.0
    center: Tuple[float, ...] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not self.alpha_plus > self.alpha_minus > 0:
            raise ConfigurationError(
                "weight needs alpha_plus > alpha_minus > 0",
                alpha_minus=self.alpha_minus,
                alpha_plus=self.alpha_plus,
            )
        if not self.beta > 0:
            raise ConfigurationError("weight needs beta > 0", beta=self.beta)
        if self.convexification < 0:
            raise ConfigurationError("convexification must be nonnegative")
        if len(self.center) < 2:
            raise ConfigurationError("center is (t0, x0...) with at least one space coordinate")

    @property
    def t0(self) -> float:
        return float(self.center[0])

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.center[1:], dtype=float)

    @property
    def alpha_ratio(self) -> float:
        return self.alpha_plus / self.alpha_minus

    def normal(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        return pts[..., 0] - self.x0[0]


def _signs(x_n: np.ndarray, side: Side | str) -> np.ndarray:
    side = Side(side)
    if side is Side.AUTO:
        return np.where(x_n < 0, -1, 1)
    return np.full(x_n.shape, side.sign)


def _scalar(out: np.ndarray):
    return float(out) if np.ndim(out) == 0 else out


def phi(x_n, side: Side | str, weight: CarlemanWeight):
    """Branch polynomial α_± x_n + β x_n²/2."""
    x = np.asarray(x_n, dtype=float)
    alpha = np.where(_signs(x, side) < 0, weight.alpha_minus, weight.alpha_plus)
    return _scalar(alpha * x + 0.5 * weight.beta * x * x)


def phi_prime(x_n, side: Side | str, weight: CarlemanWeight):
    x = np.asarray(x_n, dtype=float)
    if Side(side) is Side.AUTO and np.any(x == 0.0):
        raise AmbiguityError("weight derivative on the interface needs an explicit side")
    alpha = np.where(_signs(x, side) < 0, weight.alpha_minus, weight.alpha_plus)
    return _scalar(alpha + weight.beta * x)


def psi(t, x, weight: CarlemanWeight):
    """φ(x_n) − δ̃|(t, x) − (t0, x0)|²; broadcasts t against the leading axes of x."""
    t = np.asarray(t, dtype=float)
    pts = np.asarray(x, dtype=float)
    dist2 = (t - weight.t0) ** 2 + np.sum((pts - weight.x0) ** 2, axis=-1)
    return _scalar(phi(weight.normal(pts), Side.AUTO, weight) - weight.convexification * dist2)


@dataclass(frozen=True)
class ConvexificationReport:
    delta: float
    rho: float
    r: float
    annulus_ok: bool
    band_ok: bool
    ball_ok: bool
    samples: int

    @property
    def ok(self) -> bool:
        return self.annulus_ok and self.band_ok and self.ball_ok


def check_convexification(
    weight: CarlemanWeight, R: float, delta: Optional[float] = None, *, samples: int = 41
) -> ConvexificationReport:
    """Grid check of the level-set inclusions of the convexified weight on B(center, 4R)."""
    if not R > 0:
        raise ArgumentError("radius must be positive", R=R)
    if delta is None:
        if weight.convexification == 0:
            raise ArgumentError("convexification parameter is zero; pass delta explicitly")
        delta = weight.convexification * R * R / 40.0
    rho = delta / 10.0
    dim = len(weight.center)
    axes = [np.linspace(-4.0 * R, 4.0 * R, samples)] * dim
    z = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    norm = np.linalg.norm(z, axis=1)
    z, norm = z[norm <= 4.0 * R], norm[norm <= 4.0 * R]
    t = weight.t0 + z[:, 0]
    x = weight.x0 + z[:, 1:]
    weight_values = psi(t, x, weight)
    branch_values = phi(weight.normal(x), Side.AUTO, weight)

    target = (branch_values > 2.0 * rho) & (norm < 3.0 * R)
    band = (weight_values >= -9.0 * delta) & (weight_values <= 2.0 * delta)
    annulus = (norm >= 0.5 * R) & (norm <= 2.5 * R) & band
    upper_band = (weight_values >= 0.25 * delta) & (weight_values <= 2.0 * delta) & (norm <= 2.5 * R)
    annulus_ok = bool(np.all(target[annulus]))
    band_ok = bool(np.all(target[upper_band]))

    spacing = 8.0 * R / (samples - 1)
    bad = np.abs(weight_values) > 0.5 * delta
    reach = float(np.min(norm[bad])) if np.any(bad) else math.inf
    r = min(0.5 * (reach - spacing), 0.5 * R * (1.0 - 1e-9))
    r = max(r, 0.0)
    logger.info("Convexification: delta=%.3e rho=%.3e r=%.3e", delta, rho, r)
    return ConvexificationReport(delta, rho, r, annulus_ok, band_ok, r > 0, int(z.shape[0]))


@dataclass(frozen=True)
class MicrolocalPoint:
    x: Tuple[float, ...]
    xi_prime: Tuple[float, ...]
    xi_t: float
    tau: float = 1.0

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ArgumentError("Carleman parameter must be positive", tau=self.tau)

    @property
    def frequency_sq(self) -> float:
        return float(sum(v * v for v in self.xi_prime) + self.xi_t * self.xi_t)

    @property
    def lambda_tau(self) -> float:
        return math.sqrt(self.tau * self.tau + self.frequency_sq)


@dataclass(frozen=True)
class RegionTags:
    elliptic_minus: bool
    elliptic_plus: bool
    glancing_minus: bool
    glancing_plus: bool
    eps: float

    def labels(self) -> Tuple[str, ...]:
        names = ("elliptic_minus", "elliptic_plus", "glancing_minus", "glancing_plus")
        return tuple(name for name in names if getattr(self, name))


@dataclass(frozen=True)
class FactorSymbols:
    m_minus: Optional[float]
    m_plus: Optional[float]
    e_minus: Optional[float]
    e_plus: Optional[float]
    f_minus: Optional[float]
    f_plus: Optional[float]


def _coefficients_at(medium: MediumSpec, x) -> Tuple[float, float, float]:
    point = np.asarray(x, dtype=float).reshape(1, -1)
    c = medium.coefficient
    b = float(medium.tangential(point)[0]) if medium.dim > 1 else 0.0
    return float(c.minus(point)[0]), float(c.plus(point)[0]), b


def _frequency_arrays(xi_prime, xi_t) -> Tuple[np.ndarray, np.ndarray]:
    xp = np.asarray(xi_prime, dtype=float)
    xt = np.asarray(xi_t, dtype=float)
    xp2 = xp * xp if xp.ndim <= 1 else np.sum(xp * xp, axis=-1)
    return np.broadcast_arrays(xp2, xt * xt)


def _sided_symbols(medium: MediumSpec, x, xi_prime, xi_t):
    c_minus, c_plus, b = _coefficients_at(medium, x)
    xp2, xt2 = _frequency_arrays(xi_prime, xi_t)
    q = b * xp2
    return q - xt2 / c_minus, q - xt2 / c_plus, xp2 + xt2


def classify_grid(medium: MediumSpec, x, xi_prime, xi_t, eps: float) -> Dict[str, np.ndarray]:
    """Region flags over arrays of tangential (norms or vectors) and time frequencies at one point."""
    if not eps > 0:
        raise ArgumentError("region slack must be positive", eps=eps)
    s_minus, s_plus, norm2 = _sided_symbols(medium, x, xi_prime, xi_t)
    if np.any(norm2 == 0):
        raise ArgumentError("region classification needs a nonzero frequency")
    return {
        "elliptic_minus": s_minus >= eps * norm2,
        "elliptic_plus": s_plus >= eps * norm2,
        "glancing_minus": s_minus <= 2.0 * eps * norm2,
        "glancing_plus": s_plus <= 2.0 * eps * norm2,
    }


def m_grid(medium: MediumSpec, x, xi_prime, xi_t, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Square-root symbols per side, NaN outside the side's elliptic region."""
    s_minus, s_plus, norm2 = _sided_symbols(medium, x, xi_prime, xi_t)
    m_minus = np.where(s_minus >= eps * norm2, np.sqrt(np.maximum(s_minus, 0.0)), np.nan)
    m_plus = np.where(s_plus >= eps * norm2, np.sqrt(np.maximum(s_plus, 0.0)), np.nan)
    return m_minus, m_plus


def classify(point: MicrolocalPoint, medium: MediumSpec, eps: float) -> RegionTags:
    flags = classify_grid(medium, point.x, [math.sqrt(sum(v * v for v in point.xi_prime))], [point.xi_t], eps)
    return RegionTags(**{name: bool(value[0]) for name, value in flags.items()}, eps=eps)


def compute_m(point: MicrolocalPoint, medium: MediumSpec, eps: float) -> Tuple[Optional[float], Optional[float]]:
    tags = classify(point, medium, eps)
    m_minus, m_plus = m_grid(medium, point.x, [math.sqrt(sum(v * v for v in point.xi_prime))], [point.xi_t], eps)
    return (
        float(m_minus[0]) if tags.elliptic_minus else None,
        float(m_plus[0]) if tags.elliptic_plus else None,
    )


def factors(point: MicrolocalPoint, weight: CarlemanWeight, medium: MediumSpec, eps: float) -> FactorSymbols:
    m_minus, m_plus = compute_m(point, medium, eps)
    x_n = float(weight.normal(point.x))
    slope_minus = phi_prime(x_n, Side.MINUS, weight)
    slope_plus = phi_prime(x_n, Side.PLUS, weight)
    tau = point.tau
    return FactorSymbols(
        m_minus=m_minus,
        m_plus=m_plus,
        e_minus=None if m_minus is None else tau * slope_minus + m_minus,
        e_plus=None if m_plus is None else tau * slope_plus + m_plus,
        f_minus=None if m_minus is None else tau * slope_minus - m_minus,
        f_plus=None if m_plus is None else tau * slope_plus - m_plus,
    )


def _ratio_at(medium: MediumSpec, x, theta: float, eps: float) -> float:
    m_minus, m_plus = m_grid(medium, x, [math.cos(theta)], [math.sin(theta)], eps)
    if np.isnan(m_minus[0]) or np.isnan(m_plus[0]) or m_minus[0] == 0:
        return -math.inf
    return float(m_plus[0] / m_minus[0])


def _edge_ratios(medium: MediumSpec, x, theta: np.ndarray, eps: float) -> List[float]:
    """Ratios on the elliptic-region boundaries located by root bracketing."""
    sided = _sided_symbols(medium, x, np.cos(theta), np.sin(theta))
    out = []
    for index in (0, 1):

        def margin(th: float) -> float:
            return float(_sided_symbols(medium, x, [math.cos(th)], [math.sin(th)])[index][0]) - eps

        values = sided[index] - eps * sided[2]
        crossings = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)
        for k in crossings:
            root = brentq(margin, theta[k], theta[k + 1], xtol=1e-14, rtol=1e-15)
            # step onto the elliptic side of the root
            inside = theta[k] if values[k] >= 0 else theta[k + 1]
            for candidate in (root, root + 1e-12 * np.sign(inside - root)):
                out.append(_ratio_at(medium, x, float(candidate), eps))
    return out


def geometric_alpha_ratio(
    medium: MediumSpec, eps: float, samples: int = 10_000, *, interface_samples: int = 16
) -> float:
    """Supremum of m+/m− over interface points and unit frequencies in both elliptic regions."""
    if medium.dim < 2:
        raise RegionError("no tangential frequencies in one dimension: the elliptic regions are empty")
    points, _ = medium.interface.samples(interface_samples)
    theta = np.linspace(0.0, 0.5 * math.pi, samples)
    best = -math.inf
    for x in points:
        m_minus, m_plus = m_grid(medium, x, np.cos(theta), np.sin(theta), eps)
        both = np.isfinite(m_minus) & np.isfinite(m_plus) & (m_minus > 0)
        if np.any(both):
            best = max(best, float(np.max(m_plus[both] / m_minus[both])))
            best = max([best, *_edge_ratios(medium, x, theta, eps)])
    if not math.isfinite(best):
        raise RegionError("both elliptic regions never overlap on the frequency sphere", eps=eps)
    logger.info("Geometric ratio sup m+/m- = %.10f (eps=%.3g)", best, eps)
    return best


@dataclass
class CoverReport:
    """``overlap`` is the share of checked frequencies with μ·m+ < τα+ < μ0·m+, where both pieces apply."""

    overlap: float
    holds: bool
    constant: float
    tau0: Optional[float]
    sup_ratio: float
    witness: Optional[dict] = None
    checked: int = 0
    rows: List[Tuple[float, float]] = field(default_factory=list)


def _frequency_grid(tau: float, ratios: Sequence[float], directions: int):
    radii = np.concatenate([[0.5, 1.5], tau * np.asarray(ratios, dtype=float)])
    theta = np.linspace(0.0, 0.5 * math.pi, directions)
    xi_p = np.outer(radii, np.cos(theta)).ravel()
    xi_t = np.outer(radii, np.sin(theta)).ravel()
    return xi_p, xi_t


def _shifted(medium: MediumSpec, base: np.ndarray, x_n: float) -> Optional[np.ndarray]:
    x = base.copy()
    x[0] += x_n
    return x if medium.domain.contains(x[None, :])[0] else None


def check_gamma_cover(
    weight: CarlemanWeight,
    medium: MediumSpec,
    eps: float,
    mu: float,
    mu0: float,
    eta: float,
    *,
    taus: Optional[Sequence[float]] = None,
    ratios: Optional[Sequence[float]] = None,
    directions: int = 64,
    normal_samples: int = 5,
    interface_samples: int = 8,
) -> CoverReport:
    """Grid check that the frequency space splits into a region where f+ is positive elliptic
    (τα+ > μ m+, or small frequencies) and one where f− is negative elliptic (τα+ < μ0 m+)."""
    if not 1 < mu < mu0:
        raise ArgumentError("cover needs 1 < mu < mu0", mu=mu, mu0=mu0)
    if not eta > 0:
        raise ArgumentError("normal half-width must be positive", eta=eta)
    taus = np.geomspace(1.0, 1e3, 13) if taus is None else np.asarray(taus, dtype=float)
    ratios = np.geomspace(0.02, 200.0, 81) if ratios is None else np.asarray(ratios, dtype=float)
    sup_ratio = geometric_alpha_ratio(medium, eps)
    if weight.alpha_ratio < mu0 * mu0 * sup_ratio:
        logger.warning(
            "Weight ratio %.4f is below mu0^2 * sup = %.4f; the cover may fail",
            weight.alpha_ratio,
            mu0 * mu0 * sup_ratio,
        )
    bases, _ = medium.interface.samples(interface_samples)
    offsets = np.linspace(0.0, eta, normal_samples)
    witness = None
    checked = 0
    shared = 0
    rows = []
    for tau in taus:
        xi_p, xi_t = _frequency_grid(float(tau), ratios, directions)
        radius = np.hypot(xi_p, xi_t)
        lam = np.sqrt(tau * tau + radius * radius)
        worst = math.inf
        for base in bases:
            m_minus0, m_plus0 = m_grid(medium, base, xi_p, xi_t, eps)
            valid = np.isfinite(m_minus0) & np.isfinite(m_plus0)
            in_gamma = valid & ((radius < 2.0) | (tau * weight.alpha_plus > mu * m_plus0))
            in_tilde = valid & (radius > 1.0) & (tau * weight.alpha_plus < mu0 * m_plus0)
            shared += int(np.sum(in_gamma & in_tilde & (radius >= 2.0)))
            checked += int(valid.sum())
            for sign, members in ((1, in_gamma), (-1, in_tilde)):
                if not np.any(members):
                    continue
                for offset in offsets:
                    x = _shifted(medium, base, sign * offset)
                    if x is None:
                        continue
                    m_minus, m_plus = m_grid(medium, x, xi_p, xi_t, eps)
                    if sign > 0:
                        value = (tau * phi_prime(sign * offset, Side.PLUS, weight) - m_plus) / lam
                    else:
                        value = -(tau * phi_prime(sign * offset, Side.MINUS, weight) - m_minus) / lam
                    value = np.where(members & np.isfinite(value), value, np.inf)
                    k = int(np.argmin(value))
                    if value[k] < worst:
                        worst = float(value[k])
                        if worst <= 0:
                            witness = {
                                "tau": float(tau),
                                "xi_prime": float(xi_p[k]),
                                "xi_t": float(xi_t[k]),
                                "x_n": float(sign * offset),
                                "condition": "f_plus" if sign > 0 else "f_minus",
                            }
        rows.append((float(tau), worst))

    failing = [k for k, (_, value) in enumerate(rows) if not value > 0]
    start = failing[-1] + 1 if failing else 0
    tau0 = rows[start][0] if start < len(rows) else None
    constant = min(value for _, value in rows[start:]) if tau0 is not None else 0.0
    holds = tau0 is not None
    if holds:
        witness = None
    overlap = shared / checked if checked else 0.0
    logger.info("Cover check: tau0=%s C=%.4g overlap %.3f over %d points", tau0, constant, overlap, checked)
    return CoverReport(overlap, holds, constant, tau0, sup_ratio, witness, checked, rows)


def subellipticity_margin(
    weight: CarlemanWeight,
    medium: MediumSpec,
    x,
    xi_prime,
    xi_t,
    tau: float,
    mu: float,
    h: float = 1e-4,
) -> np.ndarray:
    """(μ f+² + τ(τβ − ∂_{x_n} m+)) / λ_τ², NaN where m+ is undefined."""
    x = np.asarray(x, dtype=float)
    step = np.zeros_like(x)
    step[0] = h
    eps = 1e-12
    _, m_plus = m_grid(medium, x, xi_prime, xi_t, eps)
    _, m_hi = m_grid(medium, x + step, xi_prime, xi_t, eps)
    _, m_lo = m_grid(medium, x - step, xi_prime, xi_t, eps)
    dm = (m_hi - m_lo) / (2.0 * h)
    x_n = float(weight.normal(x))
    f_plus = tau * phi_prime(x_n, Side.PLUS, weight) - m_plus
    xp2, xt2 = _frequency_arrays(xi_prime, xi_t)
    lam2 = tau * tau + xp2 + xt2
    return (mu * f_plus * f_plus + tau * (tau * weight.beta - dm)) / lam2


@dataclass(frozen=True)
class SubellipticityReport:
    margin: float
    witness: Optional[dict]
    checked: int


def check_subellipticity(
    weight: CarlemanWeight,
    medium: MediumSpec,
    eps: float,
    mu: float,
    eta: float,
    *,
    taus: Optional[Sequence[float]] = None,
    ratios: Sequence[float] = (0.05, 0.1, 0.3, 1.0, 3.0, 10.0),
    directions: int = 32,
    normal_samples: int = 5,
    interface_samples: int = 8,
) -> SubellipticityReport:
    if not eta > 0:
        raise ArgumentError("normal half-width must be positive", eta=eta)
    if medium.dim < 2:
        raise RegionError("no tangential frequencies in one dimension: the elliptic regions are empty")
    taus = np.geomspace(1.0, 1e3, 13) if taus is None else np.asarray(taus, dtype=float)
    h = 1e-4 * eta
    bases, _ = medium.interface.samples(interface_samples)
    best = math.inf
    witness = None
    checked = 0
    for tau in taus:
        xi_p, xi_t = _frequency_grid(float(tau), ratios, directions)
        for base in bases:
            _, m_plus0 = m_grid(medium, base, xi_p, xi_t, eps)
            valid = np.isfinite(m_plus0)
            for offset in np.linspace(0.0, eta, normal_samples):
                x = _shifted(medium, base, offset)
                if x is None:
                    continue
                margin = subellipticity_margin(weight, medium, x, xi_p, xi_t, float(tau), mu, h)
                margin = np.where(valid & np.isfinite(margin), margin, np.inf)
                checked += int(valid.sum())
                k = int(np.argmin(margin))
                if margin[k] < best:
                    best = float(margin[k])
                    witness = {"tau": float(tau), "xi_prime": float(xi_p[k]), "xi_t": float(xi_t[k]), "x_n": float(offset)}
    if not math.isfinite(best):
        raise RegionError("plus-side elliptic region is empty on the tested grid", eps=eps)
    logger.info("Sub-ellipticity margin %.4g over %d points", best, checked)
    return SubellipticityReport(best, witness, checked)


@dataclass(frozen=True)
class LocalChart:
    grid: Grid
    interface_index: int
    offset: float

    @classmethod
    def from_medium(cls, medium: MediumSpec, grid: Grid) -> "LocalChart":
        if not medium.interface.is_straight:
            raise GeometryError("local chart needs a straight interface")
        offset = medium.interface.offset
        index = grid.aligned_index(0, offset)
        if index is None or index < 2 or index > grid.shape[0] - 3:
            raise GeometryError("interface must sit on a grid line with two node layers on each side", offset=offset)
        return cls(grid, index, offset)

    def normal(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points)[:, 0] - self.offset

    def interface_nodes(self) -> np.ndarray:
        index = np.arange(self.grid.size).reshape(self.grid.shape[0], -1)
        return index[self.interface_index]

    def side_weights(self, sign: int) -> np.ndarray:
        """1 strictly inside the side, 1/2 on the interface column, 0 elsewhere."""
        normal_index = np.repeat(np.arange(self.grid.shape[0]), self.grid.size // self.grid.shape[0])
        s = self.interface_index
        inside = normal_index < s if sign < 0 else normal_index > s
        return np.where(inside, 1.0, np.where(normal_index == s, 0.5, 0.0))


@dataclass
class SidedSamples:
    """Side-resolved space-time samples; each side is stored on every node as a smooth extension."""

    times: np.ndarray
    grid: Grid
    minus: np.ndarray
    plus: np.ndarray

    def __post_init__(self) -> None:
        shape = (self.times.shape[0], self.grid.size)
        if self.minus.shape != shape or self.plus.shape != shape:
            raise ArgumentError("sided samples must have shape (times, nodes)", expected=list(shape))
        if self.times.shape[0] < 3:
            raise ArgumentError("need at least three time samples")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @classmethod
    def zeros(cls, times: np.ndarray, grid: Grid) -> "SidedSamples":
        shape = (times.shape[0], grid.size)
        return cls(times, grid, np.zeros(shape), np.zeros(shape))

    def scaled(self, factor: float) -> "SidedSamples":
        return SidedSamples(self.times, self.grid, factor * self.minus, factor * self.plus)


@dataclass(frozen=True)
class TransmissionData:
    trace_jump: np.ndarray
    flux_jump: np.ndarray


def transmission_residuals(samples: SidedSamples, medium: MediumSpec) -> TransmissionData:
    """Displacement jump u−|S − u+|S and flux jump c+∂n u+ − c−∂n u− from one-sided stencils."""
    grid = samples.grid
    chart = LocalChart.from_medium(medium, grid)
    s = chart.interface_index
    h = grid.spacing[0]
    n_t = samples.times.shape[0]
    minus = samples.minus.reshape(n_t, grid.shape[0], -1)
    plus = samples.plus.reshape(n_t, grid.shape[0], -1)
    dn_plus = (-3.0 * plus[:, s] + 4.0 * plus[:, s + 1] - plus[:, s + 2]) / (2.0 * h)
    dn_minus = (3.0 * minus[:, s] - 4.0 * minus[:, s - 1] + minus[:, s - 2]) / (2.0 * h)
    pts = grid.points()[chart.interface_nodes()]
    c = medium.coefficient
    return TransmissionData(
        trace_jump=minus[:, s] - plus[:, s],
        flux_jump=c.plus(pts)[None, :] * dn_plus - c.minus(pts)[None, :] * dn_minus,
    )


@dataclass(frozen=True)
class Breakdown:
    terms: Dict[str, float]

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))


@lru_cache(maxsize=8)
def _side_operator(medium: MediumSpec, grid: Grid, side: str):
    return assemble(medium.single_branch(Side(side)), grid)


def _support_check(samples: SidedSamples, chart: LocalChart, weight: CarlemanWeight, r0: float) -> None:
    pts = samples.grid.points()
    dist2 = (samples.times[:, None] - weight.t0) ** 2 + np.sum((pts - weight.x0) ** 2, axis=1)[None, :]
    slack = max(samples.grid.spacing) + samples.dt
    for sign, values in ((-1, samples.minus), (1, samples.plus)):
        masked = np.abs(values) * (chart.side_weights(sign)[None, :] > 0)
        peak = float(np.max(masked))
        if peak == 0.0:
            continue
        outside = (masked > 1e-12 * peak) & (dist2 > (r0 + slack) ** 2)
        if np.any(outside):
            raise ArgumentError("sample support leaves the ball around the weight center", r0=r0)


def _gradients(values: np.ndarray, dt: float, shape: Tuple[int, ...], spacing: Sequence[float]) -> List[np.ndarray]:
    """Time and space gradients of (n_t, nodes) samples laid out on a node grid."""
    cube = values.reshape((values.shape[0],) + tuple(shape))
    grads = [np.gradient(cube, dt, axis=0)]
    for axis, h in enumerate(spacing, start=1):
        if cube.shape[axis] > 1:
            grads.append(np.gradient(cube, h, axis=axis))
    return [g.reshape(values.shape[0], -1) for g in grads]


def _second_time_difference(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / (dt * dt)
    return out


def carleman_sides(
    u_pair: SidedSamples,
    transmission: Optional[TransmissionData],
    weight: CarlemanWeight,
    tau: float,
    delta: float,
    medium: MediumSpec,
    *,
    d: Optional[float] = None,
    r0: Optional[float] = None,
) -> Tuple[Breakdown, Breakdown]:
    """Quadrature of both sides of the weighted interface estimate for one sample pair."""
    if not tau >= 1:
        raise ArgumentError("Carleman parameter must be at least 1", tau=tau)
    if not delta > 0:
        raise ArgumentError("delta must be positive", delta=delta)
    d = 8.0 * delta if d is None else d
    grid = u_pair.grid
    chart = LocalChart.from_medium(medium, grid)
    if r0 is not None:
        _support_check(u_pair, chart, weight, r0)
    if transmission is None:
        transmission = transmission_residuals(u_pair, medium)

    dt = u_pair.dt
    times = u_pair.times
    pts = grid.points()
    weight_values = psi(times[:, None], pts[None, :, :], weight)
    lam = 2.0 * tau / delta
    pad = required_padding(lam, dt)

    def q(values: np.ndarray, exponent: np.ndarray) -> np.ndarray:
        return apply_Qphi(TimeSignal(values, dt, pad=pad), tau, delta, exponent).values

    cell = dt * grid.cell_volume
    exp_weight = np.exp(tau * weight_values)
    lhs = {"operator_minus": 0.0, "operator_plus": 0.0, "remainder": 0.0}
    rhs = {"l2": 0.0, "gradient_minus": 0.0, "gradient_plus": 0.0}
    for sign, name, values in ((-1, "minus", u_pair.minus), (1, "plus", u_pair.plus)):
        side_weight = chart.side_weights(sign)[None, :]
        if not np.any(values):
            continue
        operator = _side_operator(medium, grid, name)
        spatial = (operator.full @ values.T).T
        wave = _second_time_difference(values, dt) + spatial
        lhs[f"operator_{name}"] = cell * float(np.sum(side_weight * q(wave, weight_values) ** 2))

        weighted = exp_weight * values
        grad_weighted = _gradients(weighted, dt, grid.shape, grid.spacing)
        remainder = tau**3 * weighted**2 + tau * sum(g**2 for g in grad_weighted)
        lhs["remainder"] += math.exp(-d * tau) * cell * float(np.sum(side_weight * remainder))

        smoothed = q(values, weight_values)
        grad_smoothed = _gradients(smoothed, dt, grid.shape, grid.spacing)
        rhs["l2"] += tau**3 * cell * float(np.sum(side_weight * smoothed**2))
        rhs[f"gradient_{name}"] = tau * cell * float(np.sum(side_weight * sum(g**2 for g in grad_smoothed)))

    lhs["transmission"] = _transmission_term(transmission, chart, weight, times, tau, delta, pad)
    return Breakdown(lhs), Breakdown(rhs)


def _transmission_term(
    transmission: TransmissionData,
    chart: LocalChart,
    weight: CarlemanWeight,
    times: np.ndarray,
    tau: float,
    delta: float,
    pad: int,
) -> float:
    trace = np.asarray(transmission.trace_jump, dtype=float)
    flux = np.asarray(transmission.flux_jump, dtype=float)
    if not np.any(trace) and not np.any(flux):
        return 0.0
    dt = float(times[1] - times[0])
    grid = chart.grid
    pts = grid.points()[chart.interface_nodes()]
    exponent = psi(times[:, None], pts[None, :, :], weight)
    tangential = grid.spacing[1:]
    area = dt * float(np.prod(tangential)) if tangential else dt

    def q(values: np.ndarray) -> np.ndarray:
        return apply_Qphi(TimeSignal(values, dt, pad=pad), tau, delta, exponent).values

    shape = (grid.size // grid.shape[0],) if grid.dim > 1 else (1,)
    grads = _gradients(trace, dt, shape, tangential)
    value = tau**3 * float(np.sum(q(trace) ** 2))
    value += tau * sum(float(np.sum(q(g) ** 2)) for g in grads)
    value += tau * float(np.sum(q(flux) ** 2))
    return area * value


def _bump(rho2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho2)
    inside = rho2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def homogeneous_transmission_bump(
    medium: MediumSpec,
    grid: Grid,
    times: np.ndarray,
    center: Sequence[float],
    radius: float,
    *,
    amplitude: float = 1.0,
    offset: float = 1.0 / 3.0,
) -> SidedSamples:
    """Smooth bump B(t, x′, y) read on each side with y = x_n / c_±.

    Traces and fluxes match across the interface whenever the coefficient is
    constant along it; ``offset`` shifts the bump in y so the flux is nonzero.
    """
    if not radius > 0:
        raise ArgumentError("bump radius must be positive", radius=radius)
    center = np.asarray(center, dtype=float)
    x0 = center[1:]
    c_minus, c_plus, _ = _coefficients_at(medium, x0)
    pts = grid.points()
    x_n = pts[:, 0] - x0[0]
    tangential = np.sum((pts[:, 1:] - x0[1:]) ** 2, axis=1)
    time_part = ((np.asarray(times, dtype=float) - center[0]) / radius) ** 2

    def side(c: float) -> np.ndarray:
        y = x_n / c - offset * radius
        space_part = (tangential + y * y) / radius**2
        return amplitude * _bump(time_part[:, None] + space_part[None, :])

    return SidedSamples(np.asarray(times, dtype=float), grid, side(c_minus), side(c_plus))


def random_bump_family(
    medium: MediumSpec,
    grid: Grid,
    times: np.ndarray,
    center: Sequence[float],
    radius: float,
    count: int,
    *,
    seed: int = 0,
) -> List[SidedSamples]:
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    family = []
    for _ in range(count):
        shift = np.zeros_like(center)
        shift[0] = rng.uniform(-0.25, 0.25) * radius
        if center.size > 2:
            shift[2:] = rng.uniform(-0.25, 0.25, center.size - 2) * radius
        family.append(
            homogeneous_transmission_bump(
                medium,
                grid,
                times,
                center + shift,
                radius * rng.uniform(0.5, 1.0),
                amplitude=float(rng.uniform(0.5, 1.5)),
                offset=float(rng.uniform(-0.5, 0.5)),
            )
        )
    return family


@dataclass
class CertificationReport:
    rows: List[Tuple[float, float]]
    degenerate: bool
    sup_constant: float
    growing: bool
    settled_tau: Optional[float]


def carleman_certify(
    family: Sequence[SidedSamples],
    weight: CarlemanWeight,
    delta: float,
    taus: Sequence[float],
    medium: MediumSpec,
    *,
    r0: float,
    d: Optional[float] = None,
) -> CertificationReport:
    """Smallest C with C·LHS ≥ RHS across the family, per τ.

    Every member must live in the ball of radius ``r0`` around the weight
    center; a member reaching past it raises ArgumentError.
    """
    if not r0 > 0:
        raise ArgumentError("support radius must be positive", r0=r0)
    rows = []
    for tau in taus:
        ratios = []
        for member in family:
            lhs, rhs = carleman_sides(member, None, weight, float(tau), delta, medium, d=d, r0=r0)
            if lhs.total > 0:
                ratios.append(rhs.total / lhs.total)
            elif rhs.total > 0:
                ratios.append(math.inf)
        rows.append((float(tau), max(ratios) if ratios else math.nan))
        logger.info("Certification tau=%.3g: C=%.4g", tau, rows[-1][1])
    values = np.array([c for _, c in rows])
    finite = values[np.isfinite(values)]
    degenerate = finite.size == 0
    sup_constant = float(np.max(finite)) if finite.size else math.nan
    growing = bool(values.size >= 3 and np.all(np.isfinite(values[-3:])) and np.all(np.diff(values[-3:]) > 0))
    settled_tau = None
    for k in range(len(rows)):
        tail = values[k:]
        if np.all(np.isfinite(tail)) and np.all(np.diff(tail) <= 0):
            settled_tau = rows[k][0]
            break
    if growing:
        logger.warning("Fitted constant keeps growing along the tau grid")
    return CertificationReport(rows, degenerate, sup_constant, growing, settled_tau)
