"""Flux-conservative discretization of −div(c∇) with Dirichlet boundary.

The interface has to sit on a grid line normal to axis 0. Faces crossing
that line carry the harmonic mean of side-resolved nodal coefficients;
faces lying on it average the two side harmonic means, one per half cell.
The mass matrix is the cell volume times the identity, so the stiffness
matrix is symmetric in the Euclidean sense and the discrete L² product is
``cell_volume * dot``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Optional, Protocol

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from .errors import ArgumentError, GeometryError, NumericError, SpectrumTruncatedWarning
from .grid import Grid
from .medium import MediumSpec
from .metrics import get_metrics

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096
TAIL_TOLERANCE = 1e-6


class SobolevNorms(Protocol):
    def norm_hs(self, u: np.ndarray, s: int) -> float: ...


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def _check_exponent(s: int) -> int:
    if s not in (-1, 0, 1):
        raise ArgumentError("Sobolev exponent must be -1, 0 or 1", s=s)
    return int(s)


@dataclass(eq=False)
class DiscreteOperator:
    medium: MediumSpec
    grid: Grid
    full: sparse.csr_matrix
    matrix: sparse.csr_matrix
    interior: np.ndarray
    interface_index: int
    face_coefficients: list
    power_iterations: int = 50
    _interior_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._interior_index = np.flatnonzero(self.interior)

    @property
    def dof(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def weight(self) -> float:
        return self.grid.cell_volume

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def apply_full(self, values: np.ndarray) -> np.ndarray:
        """Stencil applied to a full node array (boundary values included), at interior nodes."""
        flat = np.asarray(values, dtype=float).reshape(self.grid.size, *np.shape(values)[self.grid.dim :])
        return (self.full @ flat)[self._interior_index]

    def to_grid(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros((self.grid.size,) + np.shape(u)[1:])
        out[self._interior_index] = u
        return out

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        flat = np.asarray(values, dtype=float).reshape(self.grid.size, *np.shape(values)[self.grid.dim :])
        return flat[self._interior_index]

    def interior_points(self) -> np.ndarray:
        return self.grid.points()[self._interior_index]

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return self.weight * float(np.dot(u, v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    @cached_property
    def lambda_max(self) -> float:
        """Largest eigenvalue estimate from power iteration, with a 10% margin."""
        rng = np.random.default_rng(0)
        v = rng.standard_normal(self.dof)
        v /= np.linalg.norm(v)
        estimate = 0.0
        for _ in range(self.power_iterations):
            w = self.matrix @ v
            estimate = float(np.dot(v, w))
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            v = w / norm
        get_metrics().record_applications(self.power_iterations)
        return 1.1 * estimate

    def norm_hs(self, u: np.ndarray, s: int) -> float:
        s = _check_exponent(s)
        if s == 0:
            return self.norm(u)
        if s == 1:
            return float(np.sqrt(max(self.inner(self.apply(u), u), 0.0)))
        if not np.any(u):
            return 0.0
        return float(np.sqrt(max(self.inner(u, apply_inverse(self, u, 1e-12)), 0.0)))


def alignment_hint(grid: Grid, offset: float) -> str:
    lo, hi = grid.lower[0], grid.upper[0]
    frac = Fraction((offset - lo) / (hi - lo)).limit_denominator(100000)
    return f"use a multiple of {frac.denominator} cells along the normal axis"


def assemble(medium: MediumSpec, grid: Grid, *, power_iterations: int = 50) -> DiscreteOperator:
    if grid.dim != medium.dim:
        raise GeometryError("grid and medium dimensions differ")
    if not medium.interface.is_straight:
        raise GeometryError(
            "the finite-volume operator needs a straight interface on a grid line",
            hint="use a vertical interface x = const",
        )
    offset = medium.interface.offset
    s_index = grid.aligned_index(0, offset)
    if s_index is None or s_index in (0, grid.shape[0] - 1):
        raise GeometryError(
            "interface is not aligned with a grid line",
            offset=offset,
            hint=alignment_hint(grid, offset),
        )

    pts = grid.points()
    c_minus = medium.coefficient.minus(pts).reshape(grid.shape)
    c_plus = medium.coefficient.plus(pts).reshape(grid.shape)
    index = np.arange(grid.size).reshape(grid.shape)
    rows, cols, data = [], [], []
    faces = []
    for axis in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        hm_minus = _harmonic(c_minus[lo], c_minus[hi])
        hm_plus = _harmonic(c_plus[lo], c_plus[hi])
        normal_index = np.arange(grid.shape[0]).reshape((-1,) + (1,) * (grid.dim - 1))
        if axis == 0:
            # face between normal index k and k+1 lies in Ω− iff k+1 <= s
            normal_index = normal_index[:-1]
            coeff = np.where(normal_index + 1 <= s_index, hm_minus, hm_plus)
        else:
            coeff = np.where(
                normal_index < s_index,
                hm_minus,
                np.where(normal_index > s_index, hm_plus, 0.5 * (hm_minus + hm_plus)),
            )
        coeff = np.broadcast_to(coeff, hm_minus.shape).copy()
        faces.append(coeff)
        scale = coeff.ravel() / grid.spacing[axis] ** 2
        i = index[lo].ravel()
        j = index[hi].ravel()
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        data += [scale, scale, -scale, -scale]

    size = grid.size
    full = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    interior = grid.interior_mask()
    keep = np.flatnonzero(interior)
    matrix = full[keep][:, keep].tocsr()
    matrix.sort_indices()
    logger.info("Assembled operator: grid %s, %d unknowns, interface at node %d", grid.shape, keep.size, s_index)
    return DiscreteOperator(
        medium=medium,
        grid=grid,
        full=full,
        matrix=matrix,
        interior=interior,
        interface_index=s_index,
        face_coefficients=faces,
        power_iterations=power_iterations,
    )


@dataclass(eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weight: float
    dimension: int

    @property
    def count(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def complete(self) -> bool:
        return self.count == self.dimension

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        return self.weight * (self.eigenvectors.T @ u)

    def gram(self) -> np.ndarray:
        return self.weight * (self.eigenvectors.T @ self.eigenvectors)

    def mode(self, k: int) -> np.ndarray:
        """Eigenvector k, counted from 1."""
        return self.eigenvectors[:, k - 1].copy()

    def tail_mass(self, u: np.ndarray) -> float:
        total = self.weight * float(np.dot(u, u))
        if total == 0.0:
            return 0.0
        captured = float(np.sum(self.coefficients(u) ** 2))
        return max(total - captured, 0.0) / total

    def norm_hs(self, u: np.ndarray, s: int) -> float:
        s = _check_exponent(s)
        coeffs = self.coefficients(u)
        if not self.complete:
            tail = self.tail_mass(u)
            if tail > TAIL_TOLERANCE:
                logger.warning("Spectrum truncated below the energy content: tail mass %.3e", tail)
                warnings.warn(
                    f"spectrum misses {tail:.3e} of the L2 mass",
                    SpectrumTruncatedWarning,
                    stacklevel=2,
                )
        return float(np.sqrt(np.sum(self.eigenvalues**s * coeffs**2)))

    def rows(self):
        for k, value in enumerate(self.eigenvalues, start=1):
            yield k, float(value)


def eigendecompose(
    operator: DiscreteOperator,
    k: int,
    *,
    cache=None,
    dense_limit: int = DENSE_LIMIT,
) -> Spectrum:
    dof = operator.dof
    if not 1 <= k <= dof:
        raise ArgumentError("number of eigenpairs must lie in [1, dimension]", k=k, dimension=dof)
    method = "dense" if dof <= dense_limit else "lanczos"
    key = None
    if cache is not None:
        key = cache.build_key(operator, k, method)
        hit = cache.get(key)
        get_metrics().record_cache(hit is not None)
        if hit is not None:
            values, vectors = hit
            return Spectrum(values, vectors, operator.weight, dof)

    matrix = operator.matrix
    if method == "dense":
        values, vectors = eigh(matrix.toarray(), subset_by_index=[0, k - 1])
    else:
        if k >= dof:
            raise ArgumentError("iterative eigensolver needs k < dimension", k=k, dimension=dof)
        try:
            values, vectors = eigsh(matrix.tocsc(), k=k, sigma=0.0, which="LM")
        except Exception as exc:  # ArpackNoConvergence and factorization failures
            raise NumericError("iterative eigensolver did not converge", detail_message=str(exc)) from exc
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]
    get_metrics().record_eigensolve()

    residual = np.linalg.norm(matrix @ vectors - vectors * values, axis=0)
    worst = float(np.max(residual / np.maximum(np.abs(values), 1e-300)))
    if values[0] <= 0 or worst > 1e-8:
        raise NumericError(
            "eigenpairs failed the residual check",
            residual=worst,
            smallest=float(values[0]),
        )
    logger.info("Eigendecomposition (%s): %d pairs, lambda_1=%.6g, worst residual %.2e", method, k, values[0], worst)

    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    vectors = vectors * signs / np.sqrt(operator.weight)
    if cache is not None and key is not None:
        cache.set(key, values, vectors)
    return Spectrum(values, vectors, operator.weight, dof)


def norm_Hs(u: np.ndarray, s: int, spectrum: SobolevNorms) -> float:
    return spectrum.norm_hs(u, s)


def sobolev_norm(u: np.ndarray, s: int, operator: DiscreteOperator) -> float:
    return operator.norm_hs(u, s)


def typical_frequency(u0: np.ndarray, u1: np.ndarray, norms: SobolevNorms) -> float:
    upper = np.hypot(norms.norm_hs(u0, 1), norms.norm_hs(u1, 0))
    lower = np.hypot(norms.norm_hs(u0, 0), norms.norm_hs(u1, -1))
    if lower == 0.0:
        raise ArgumentError("typical frequency of zero data is undefined")
    return float(upper / lower)


def energy_pair_norms(u0: np.ndarray, u1: np.ndarray, norms: SobolevNorms) -> tuple[float, float]:
    """(‖·‖_{H¹×L²}, ‖·‖_{L²×H⁻¹}) of initial data."""
    high = float(np.hypot(norms.norm_hs(u0, 1), norms.norm_hs(u1, 0)))
    low = float(np.hypot(norms.norm_hs(u0, 0), norms.norm_hs(u1, -1)))
    return high, low


def apply_inverse(
    operator: DiscreteOperator,
    u: np.ndarray,
    tolerance: float = 1e-10,
    *,
    maxiter: Optional[int] = None,
) -> np.ndarray:
    if not tolerance > 0:
        raise ArgumentError("tolerance must be positive", tolerance=tolerance)
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        return np.zeros_like(u)
    matrix = operator.matrix
    diagonal = matrix.diagonal()
    preconditioner = LinearOperator(matrix.shape, matvec=lambda x: x / diagonal, dtype=float)
    iterations = 0

    def _count(_):
        nonlocal iterations
        iterations += 1

    budget = maxiter if maxiter is not None else max(10 * operator.dof, 100)
    result, info = cg(matrix, u, rtol=tolerance, atol=0.0, maxiter=budget, M=preconditioner, callback=_count)
    get_metrics().record_cg(iterations)
    if info != 0:
        residual = float(np.linalg.norm(matrix @ result - u) / np.linalg.norm(u))
        raise NumericError("conjugate gradient exceeded its iteration budget", residual=residual, iterations=iterations)
    return result
