"""Domain, interface and piecewise coefficient, plus the travel-time metric.

Distances are measured in the metric c^{-1}|dx|², i.e. a path's length is the
integral of |γ'|/√c. Shortest paths are searched on a grid graph whose
interface nodes are duplicated (one vertex per side) and joined by a
negligible-weight crossing edge.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import minimize, minimize_scalar
from scipy.sparse.csgraph import dijkstra

from .errors import AmbiguityError, ArgumentError, ConfigurationError, DomainError, GeometryError
from .grid import Grid

logger = logging.getLogger(__name__)

_CROSSING_WEIGHT = 1e-15
_SIDE_TOL = 1e-12
_RELAX_VERTICES = 12

_EDGE_OFFSETS = {
    1: {2: [(1,)]},
    2: {
        8: [(1, 0), (0, 1), (1, 1), (1, -1)],
        16: [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)],
    },
}


class Side(str, Enum):
    AUTO = "auto"
    MINUS = "minus"
    PLUS = "plus"

    @property
    def sign(self) -> int:
        return {"auto": 0, "minus": -1, "plus": 1}[self.value]


@dataclass(frozen=True)
class Domain:
    kind: str
    bounds: Tuple[Tuple[float, float], ...]
    boundary_condition: str = "dirichlet"

    def __post_init__(self) -> None:
        expected = {"interval": 1, "rectangle": 2}
        if self.kind not in expected:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if len(self.bounds) != expected[self.kind]:
            raise ConfigurationError(
                f"{self.kind} domain needs {expected[self.kind]} axis bounds",
                bounds=[list(b) for b in self.bounds],
            )
        if any(hi <= lo for lo, hi in self.bounds):
            raise ConfigurationError("domain extents must be positive")
        if self.boundary_condition != "dirichlet":
            raise ConfigurationError("only Dirichlet boundaries are supported")

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Domain":
        return cls("interval", ((float(lo), float(hi)),))

    @classmethod
    def rectangle(cls, x: Sequence[float], y: Sequence[float]) -> "Domain":
        return cls("rectangle", ((float(x[0]), float(x[1])), (float(y[0]), float(y[1]))))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def scale(self) -> float:
        return max(hi - lo for lo, hi in self.bounds)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        slack = tol * self.scale
        inside = np.ones(pts.shape[0], dtype=bool)
        for axis, (lo, hi) in enumerate(self.bounds):
            inside &= (pts[:, axis] >= lo - slack) & (pts[:, axis] <= hi + slack)
        return inside


@dataclass(frozen=True)
class InterfaceSpec:
    """A point in 1D, or a graph x = g(y) given by polyline nodes in 2D.

    Ω− lies at smaller x, so normals point along +x (tilted by the graph slope).
    """

    kind: str
    position: Optional[float] = None
    nodes: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "point":
            if self.position is None:
                raise ConfigurationError("point interface needs a position")
        elif self.kind == "graph":
            if len(self.nodes) < 2:
                raise ConfigurationError("graph interface needs at least two nodes")
            ys = [y for _, y in self.nodes]
            if any(b <= a for a, b in zip(ys, ys[1:])):
                raise ConfigurationError("graph interface nodes must have increasing y")
        else:
            raise ConfigurationError(f"unknown interface kind {self.kind!r}")

    @classmethod
    def point(cls, position: float) -> "InterfaceSpec":
        return cls("point", position=float(position))

    @classmethod
    def vertical(cls, x: float, y_range: Sequence[float]) -> "InterfaceSpec":
        return cls("graph", nodes=((float(x), float(y_range[0])), (float(x), float(y_range[1]))))

    @property
    def dim(self) -> int:
        return 1 if self.kind == "point" else 2

    @property
    def is_straight(self) -> bool:
        if self.kind == "point":
            return True
        xs = [x for x, _ in self.nodes]
        return max(xs) - min(xs) == 0.0

    @property
    def offset(self) -> float:
        """Normal position of a straight interface."""
        if self.kind == "point":
            return float(self.position)
        if not self.is_straight:
            raise GeometryError("interface is not straight")
        return float(self.nodes[0][0])

    def graph(self, y: np.ndarray) -> np.ndarray:
        xs = np.array([x for x, _ in self.nodes])
        ys = np.array([y_ for _, y_ in self.nodes])
        return np.interp(y, ys, xs)

    def level(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "point":
            return pts[:, 0] - float(self.position)
        return pts[:, 0] - self.graph(pts[:, 1])

    def samples(self, count: int = 16) -> Tuple[np.ndarray, np.ndarray]:
        """Sample points on the interface with unit normals from Ω− into Ω+."""
        if self.kind == "point":
            return np.array([[float(self.position)]]), np.array([[1.0]])
        ys = np.array([y for _, y in self.nodes])
        y = np.linspace(ys[0], ys[-1], count)
        x = self.graph(y)
        slope = np.gradient(x, y) if count > 1 else np.zeros_like(y)
        normals = np.stack([np.ones_like(slope), -slope], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return np.stack([x, y], axis=1), normals

    def validate(self, domain: Domain) -> None:
        if self.dim != domain.dim:
            raise GeometryError("interface and domain dimensions differ")
        (xlo, xhi) = domain.bounds[0]
        if self.kind == "point":
            if not xlo < self.position < xhi:
                raise GeometryError("interface must lie strictly inside the domain", position=self.position)
            return
        xs = [x for x, _ in self.nodes]
        ys = [y for _, y in self.nodes]
        if min(xs) <= xlo or max(xs) >= xhi:
            raise GeometryError("interface must stay strictly inside the domain in x")
        ylo, yhi = domain.bounds[1]
        if ys[0] > ylo or ys[-1] < yhi:
            raise GeometryError(
                "graph interface must span the full y extent to split the domain in two",
                y_range=[ys[0], ys[-1]],
            )


@dataclass(frozen=True)
class Branch:
    """Affine scalar field value + gradient·(x − anchor)."""

    value: float
    gradient: Tuple[float, ...] = ()
    anchor: Tuple[float, ...] = ()

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(pts.shape[0], float(self.value))
        if self.gradient and any(g != 0.0 for g in self.gradient):
            anchor = np.asarray(self.anchor or (0.0,) * len(self.gradient), dtype=float)
            out = out + (pts[:, : len(self.gradient)] - anchor) @ np.asarray(self.gradient, dtype=float)
        return out

    def scaled(self, factor: float) -> "Branch":
        return Branch(self.value * factor, tuple(g * factor for g in self.gradient), self.anchor)


@dataclass(frozen=True)
class PiecewiseCoefficient:
    minus: Branch
    plus: Branch
    c_min: float
    c_max: float

    @classmethod
    def constant(
        cls, c_minus: float, c_plus: float, c_min: Optional[float] = None, c_max: Optional[float] = None
    ) -> "PiecewiseCoefficient":
        lo = min(c_minus, c_plus)
        hi = max(c_minus, c_plus)
        return cls(
            minus=Branch(float(c_minus)),
            plus=Branch(float(c_plus)),
            c_min=float(c_min if c_min is not None else 0.5 * lo),
            c_max=float(c_max if c_max is not None else 2.0 * hi),
        )

    def branch(self, side: Side | str | int) -> Branch:
        sign = side if isinstance(side, int) else Side(side).sign
        if sign < 0:
            return self.minus
        if sign > 0:
            return self.plus
        raise AmbiguityError("a branch needs an explicit side")

    def evaluate(self, points: np.ndarray, signs: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        signs = np.broadcast_to(np.asarray(signs), (pts.shape[0],))
        return np.where(signs < 0, self.minus(pts), self.plus(pts))


@dataclass(frozen=True)
class MediumSpec:
    domain: Domain
    interface: InterfaceSpec
    coefficient: PiecewiseCoefficient
    tangential: Branch = field(default_factory=lambda: Branch(1.0))
    tangential_bounds: Tuple[float, float] = (1.0, 1.0)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def validate(self, samples: int = 33) -> "MediumSpec":
        self.interface.validate(self.domain)
        axes = [np.linspace(lo, hi, samples) for lo, hi in self.domain.bounds]
        pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        pts = np.vstack([pts, self.interface.samples(samples)[0]])
        level = self.interface.level(pts)
        c = self.coefficient
        for sign, branch in ((-1, c.minus), (1, c.plus)):
            closure = pts[level * sign >= -_SIDE_TOL * self.domain.scale]
            values = branch(closure)
            if values.size and (values.min() <= c.c_min or values.max() >= c.c_max):
                raise ConfigurationError(
                    "coefficient leaves (c_min, c_max) on the closure of its side",
                    side="minus" if sign < 0 else "plus",
                    observed=[float(values.min()), float(values.max())],
                    bounds=[c.c_min, c.c_max],
                )
        if self.dim == 2:
            b1, b2 = self.tangential_bounds
            values = self.tangential(pts)
            if not 0 < b1 <= b2 or values.min() < b1 - 1e-12 or values.max() > b2 + 1e-12:
                raise ConfigurationError(
                    "tangential form violates its declared bounds",
                    observed=[float(values.min()), float(values.max())],
                    bounds=[b1, b2],
                )
        return self

    def side_of(self, points: np.ndarray) -> np.ndarray:
        level = self.interface.level(points)
        tol = _SIDE_TOL * self.domain.scale
        return np.where(level > tol, 1, np.where(level < -tol, -1, 0))

    def eval_c(self, x: Sequence[float] | float, side: Side | str = Side.AUTO) -> float:
        point = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
        if point.shape[1] != self.dim:
            raise ArgumentError("position has the wrong dimension", position=point.ravel().tolist())
        if not self.domain.contains(point)[0]:
            raise DomainError("position outside the domain", position=point.ravel().tolist())
        side = Side(side)
        sign = side.sign
        if sign == 0:
            sign = int(self.side_of(point)[0])
            if sign == 0:
                raise AmbiguityError(
                    "position lies on the interface; pass side='minus' or 'plus'",
                    position=point.ravel().tolist(),
                )
        return float(self.coefficient.branch(sign)(point)[0])

    def c_values(self, points: np.ndarray, signs: Optional[np.ndarray] = None) -> np.ndarray:
        pts = np.atleast_2d(points)
        if signs is None:
            signs = self.side_of(pts)
            if np.any(signs == 0):
                raise AmbiguityError("points on the interface need explicit sides")
        return self.coefficient.evaluate(pts, signs)

    def q_form(self, x: Sequence[float], xi_prime: np.ndarray) -> np.ndarray:
        """Tangential quadratic form b(x)|ξ′|²."""
        xi = np.asarray(xi_prime, dtype=float)
        b = float(self.tangential(np.asarray(x, dtype=float).reshape(1, -1))[0])
        if xi.ndim == 0:
            return b * xi * xi
        return b * np.sum(xi * xi, axis=-1)

    def single_branch(self, side: Side | str) -> "MediumSpec":
        branch = self.coefficient.branch(Side(side))
        coefficient = replace(self.coefficient, minus=branch, plus=branch)
        return replace(self, coefficient=coefficient)

    def scaled(self, factor: float) -> "MediumSpec":
        c = self.coefficient
        coefficient = PiecewiseCoefficient(
            minus=c.minus.scaled(factor),
            plus=c.plus.scaled(factor),
            c_min=c.c_min * factor,
            c_max=c.c_max * factor,
        )
        return replace(self, coefficient=coefficient)


@dataclass(frozen=True)
class Region:
    """Union of closed axis-aligned boxes."""

    boxes: Tuple[Tuple[Tuple[float, float], ...], ...]

    @classmethod
    def box(cls, *bounds: Sequence[float]) -> "Region":
        return cls((tuple((float(lo), float(hi)) for lo, hi in bounds),))

    @classmethod
    def whole(cls, domain: Domain) -> "Region":
        return cls((domain.bounds,))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0], dtype=bool)
        for box in self.boxes:
            inside = np.ones(pts.shape[0], dtype=bool)
            for axis, (lo, hi) in enumerate(box):
                inside &= (pts[:, axis] >= lo - tol) & (pts[:, axis] <= hi + tol)
            out |= inside
        return out


@dataclass(frozen=True)
class BoundaryRegion:
    """A face of the domain (optionally a span along it); faces are x_lo, x_hi, y_lo, y_hi."""

    face: str
    span: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        if self.face not in {"x_lo", "x_hi", "y_lo", "y_hi"}:
            raise ConfigurationError(f"unknown boundary face {self.face!r}")

    @property
    def axis(self) -> int:
        return 0 if self.face.startswith("x") else 1

    @property
    def outward(self) -> int:
        return -1 if self.face.endswith("lo") else 1

    def stencil(self, grid: Grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Boundary nodes, their first and second inward neighbours, and face weights."""
        if self.axis >= grid.dim:
            raise ArgumentError("boundary face does not exist in this dimension", face=self.face)
        n = grid.shape[self.axis]
        layers = [0, 1, 2] if self.outward < 0 else [n - 1, n - 2, n - 3]
        index = np.arange(grid.size).reshape(grid.shape)
        picked = [np.take(index, layer, axis=self.axis).ravel() for layer in layers]
        if grid.dim == 1:
            weights = np.ones(1)
            keep = np.ones(1, dtype=bool)
        else:
            other = 1 - self.axis
            coords = grid.points()[picked[0], other]
            h = grid.spacing[other]
            weights = np.full(coords.shape, h)
            weights[0] = weights[-1] = 0.5 * h
            keep = np.ones(coords.shape, dtype=bool)
            if self.span is not None:
                keep = (coords >= self.span[0] - 1e-12) & (coords <= self.span[1] + 1e-12)
        if not np.any(keep):
            raise ArgumentError("boundary region contains no grid nodes", face=self.face)
        return picked[0][keep], picked[1][keep], picked[2][keep], weights[keep]


def eval_c(medium: MediumSpec, x: Sequence[float] | float, side: Side | str = Side.AUTO) -> float:
    return medium.eval_c(x, side)


def path_length(path: Sequence[Sequence[float]] | np.ndarray, medium: MediumSpec, subdivisions: int = 32) -> float:
    pts = np.asarray(path, dtype=float)
    if pts.size == 0:
        raise ArgumentError("empty polyline")
    pts = pts.reshape(-1, medium.dim)
    if not np.all(medium.domain.contains(pts, tol=1e-9)):
        raise DomainError("polyline leaves the domain")
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += _segment_length(a, b, medium, subdivisions)
    return total


def _segment_crossings(a: np.ndarray, b: np.ndarray, interface: InterfaceSpec) -> list[float]:
    params = [0.0, 1.0]
    if interface.kind == "graph" and b[1] != a[1]:
        for _, y in interface.nodes:
            t = (y - a[1]) / (b[1] - a[1])
            if 0.0 < t < 1.0:
                params.append(t)
    params = sorted(set(params))
    ts = np.array(params)
    level = interface.level(a[None, :] + ts[:, None] * (b - a)[None, :])
    cuts = []
    for (t0, l0), (t1, l1) in zip(zip(ts, level), zip(ts[1:], level[1:])):
        if l0 * l1 < 0:
            cuts.append(t0 + (t1 - t0) * l0 / (l0 - l1))
    return cuts


def _segment_length(a: np.ndarray, b: np.ndarray, medium: MediumSpec, subdivisions: int) -> float:
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        return 0.0
    cuts = [0.0] + _segment_crossings(a, b, medium.interface) + [1.0]
    total = 0.0
    for t0, t1 in zip(cuts, cuts[1:]):
        if t1 <= t0:
            continue
        tm = (np.arange(subdivisions) + 0.5) / subdivisions
        ts = t0 + (t1 - t0) * tm
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        sign = int(medium.side_of((a + 0.5 * (t0 + t1) * (b - a))[None, :])[0])
        if sign == 0:
            # piece runs along the interface: the faster side is admissible
            c = np.maximum(medium.coefficient.minus(pts), medium.coefficient.plus(pts))
        else:
            c = medium.coefficient.branch(sign)(pts)
        total += (t1 - t0) * length * float(np.mean(1.0 / np.sqrt(c)))
    return total


@dataclass(frozen=True)
class DistanceGraph:
    grid: Grid
    vertex_points: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    minus_copy: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertex_points.shape[0]

    def base_of(self, vertex: np.ndarray) -> np.ndarray:
        vertex = np.asarray(vertex)
        base = vertex.copy()
        extra = vertex >= self.grid.size
        if np.any(extra):
            on_nodes = np.flatnonzero(self.minus_copy >= 0)
            base[extra] = on_nodes[vertex[extra] - self.grid.size]
        return base

    def matrix(self, extra_rows=(), extra_cols=(), extra_weights=(), extra_vertices: int = 0) -> sparse.csr_matrix:
        n = self.n_vertices + extra_vertices
        rows = np.concatenate([self.rows, np.asarray(extra_rows, dtype=int)])
        cols = np.concatenate([self.cols, np.asarray(extra_cols, dtype=int)])
        data = np.concatenate([self.weights, np.asarray(extra_weights, dtype=float)])
        return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    def vertices_for_nodes(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=int)
        copies = self.minus_copy[nodes]
        return np.concatenate([nodes, copies[copies >= 0]])


@lru_cache(maxsize=8)
def build_graph(medium: MediumSpec, resolution: float, connectivity: int = 8) -> DistanceGraph:
    if not resolution > 0:
        raise ArgumentError("resolution must be positive", resolution=resolution)
    offsets = _EDGE_OFFSETS[medium.dim].get(connectivity if medium.dim == 2 else 2)
    if offsets is None:
        raise ArgumentError("connectivity must be 8 or 16 in 2D", connectivity=connectivity)
    grid = Grid.from_resolution(medium.domain.bounds, resolution)
    pts = grid.points()
    level = medium.interface.level(pts)
    tol = 1e-9 * grid.min_spacing
    on = np.abs(level) <= tol
    sides = np.where(on, 0, np.sign(level)).astype(int)
    minus_copy = np.full(grid.size, -1, dtype=int)
    minus_copy[on] = grid.size + np.arange(int(on.sum()))

    index = np.arange(grid.size).reshape(grid.shape)
    all_rows, all_cols, all_weights = [], [], []
    for offset in offsets:
        src = [slice(max(0, -o), n - max(0, o)) for o, n in zip(offset, grid.shape)]
        dst = [slice(max(0, o), n - max(0, -o)) for o, n in zip(offset, grid.shape)]
        i = index[tuple(src)].ravel()
        j = index[tuple(dst)].ravel()
        rows, cols, weights = _edge_weights(medium, pts, level, sides, minus_copy, i, j)
        all_rows.append(rows)
        all_cols.append(cols)
        all_weights.append(weights)
    on_nodes = np.flatnonzero(on)
    all_rows.append(on_nodes)
    all_cols.append(minus_copy[on_nodes])
    all_weights.append(np.full(on_nodes.shape, _CROSSING_WEIGHT))

    rows = np.concatenate(all_rows)
    cols = np.concatenate(all_cols)
    weights = np.concatenate(all_weights)
    vertex_points = np.vstack([pts, pts[on]])
    logger.info(
        "Distance graph: %d vertices, %d edges, %d duplicated interface nodes",
        vertex_points.shape[0],
        rows.shape[0],
        on_nodes.shape[0],
    )
    return DistanceGraph(grid, vertex_points, rows, cols, weights, minus_copy)


def _edge_weights(medium, pts, level, sides, minus_copy, i, j):
    p, q = pts[i], pts[j]
    length = np.linalg.norm(q - p, axis=1)
    si, sj = sides[i], sides[j]
    mid = 0.5 * (p + q)
    s_mid = medium.side_of(mid)

    cross = si * sj < 0
    edge_side = np.where(si != 0, si, np.where(sj != 0, sj, s_mid))
    along = (~cross) & (edge_side == 0)
    plain = (~cross) & (~along)

    rows, cols, weights = [], [], []
    coef = medium.coefficient

    if np.any(plain):
        ii, jj, es = i[plain], j[plain], edge_side[plain]
        c = coef.evaluate(mid[plain], es)
        rows.append(np.where((es < 0) & (minus_copy[ii] >= 0), minus_copy[ii], ii))
        cols.append(np.where((es < 0) & (minus_copy[jj] >= 0), minus_copy[jj], jj))
        weights.append(length[plain] / np.sqrt(c))
    if np.any(along):
        ii, jj, mm = i[along], j[along], mid[along]
        w = length[along]
        rows += [minus_copy[ii], ii]
        cols += [minus_copy[jj], jj]
        weights += [w / np.sqrt(coef.minus(mm)), w / np.sqrt(coef.plus(mm))]
    if np.any(cross):
        ii, jj = i[cross], j[cross]
        li, lj = level[ii], level[jj]
        t = li / (li - lj)
        a, b = pts[ii], pts[jj]
        first = a + 0.5 * t[:, None] * (b - a)
        second = a + (0.5 + 0.5 * t)[:, None] * (b - a)
        w = length[cross] * (
            t / np.sqrt(coef.evaluate(first, sides[ii])) + (1 - t) / np.sqrt(coef.evaluate(second, sides[jj]))
        )
        rows.append(ii)
        cols.append(jj)
        weights.append(w)
    return np.concatenate(rows), np.concatenate(cols), np.maximum(np.concatenate(weights), _CROSSING_WEIGHT)


def _attach(graph: DistanceGraph, medium: MediumSpec, points: Sequence[np.ndarray]):
    """Extra vertices for off-grid points, linked to the corners of their cells."""
    rows, cols, weights = [], [], []
    ids = []
    for k, x in enumerate(points):
        vid = graph.n_vertices + k
        ids.append(vid)
        corners = graph.grid.cell_corners(x)
        for node in corners:
            w = max(path_length([x, graph.grid.points()[node]], medium, subdivisions=8), _CROSSING_WEIGHT)
            for vertex in graph.vertices_for_nodes(np.array([node])):
                rows.append(vid)
                cols.append(int(vertex))
                weights.append(w)
    return ids, rows, cols, weights


def distance(
    x0: Sequence[float] | float,
    x1: Sequence[float] | float,
    medium: MediumSpec,
    resolution: float,
    *,
    connectivity: int = 8,
    refine: bool = True,
) -> float:
    if not resolution > 0:
        raise ArgumentError("resolution must be positive", resolution=resolution)
    a = np.atleast_1d(np.asarray(x0, dtype=float)).reshape(-1)
    b = np.atleast_1d(np.asarray(x1, dtype=float)).reshape(-1)
    if not np.all(medium.domain.contains(np.vstack([a, b]))):
        raise DomainError("distance endpoints must lie in the closed domain")
    if np.array_equal(a, b):
        return 0.0
    graph = build_graph(medium, float(resolution), connectivity)
    ids, rows, cols, weights = _attach(graph, medium, [a, b])
    matrix = graph.matrix(rows, cols, weights, extra_vertices=2)
    dist, pred = dijkstra(matrix, directed=False, indices=ids[0], return_predecessors=True)
    value = float(dist[ids[1]])
    if not math.isfinite(value):
        raise GeometryError("endpoints are not connected on the distance graph")
    if refine and medium.dim > 1:
        value = min(value, _relax_path(graph, medium, pred, ids, a, b), _crossing_search(medium, a, b))
    return value


def _interface_path(interface: InterfaceSpec, y0: float, y1: float) -> np.ndarray:
    """Points on the interface from height y0 to y1, polyline nodes in between included."""
    ys = np.array([y for _, y in interface.nodes])
    lo, hi = min(y0, y1), max(y0, y1)
    inner = ys[(ys > lo) & (ys < hi)]
    if y1 < y0:
        inner = inner[::-1]
    heights = np.concatenate([[y0], inner, [y1]])
    return np.stack([interface.graph(heights), heights], axis=1)


def _crossing_search(medium: MediumSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Best of the straight path, one touch of the interface, and a glide along it.

    Each candidate is an admissible path, so the minimum stays an upper bound.
    The touch point is found per polyline piece by a bounded scalar search.
    """
    interface = medium.interface
    (_, _), (y_lo, y_hi) = medium.domain.bounds
    ys = [y for _, y in interface.nodes]
    lo, hi = max(ys[0], y_lo), min(ys[-1], y_hi)
    knots = [lo] + [y for y in ys if lo < y < hi] + [hi]

    def touch(y: float) -> float:
        return path_length(np.vstack([a, _interface_path(interface, y, y)[:1], b]), medium, subdivisions=8)

    def glide(heights: np.ndarray) -> float:
        path = _interface_path(interface, float(heights[0]), float(heights[1]))
        return path_length(np.vstack([a, path, b]), medium, subdivisions=8)

    best = path_length([a, b], medium)
    for y0, y1 in zip(knots, knots[1:]):
        result = minimize_scalar(touch, bounds=(y0, y1), method="bounded", options={"xatol": 1e-12})
        point = _interface_path(interface, float(result.x), float(result.x))[:1]
        best = min(best, path_length(np.vstack([a, point, b]), medium))

    scan = np.linspace(lo, hi, 9)
    start = min((np.array([p, q]) for p in scan for q in scan), key=glide)
    result = minimize(
        glide,
        start,
        method="L-BFGS-B",
        bounds=[(lo, hi), (lo, hi)],
        options={"maxiter": 200, "ftol": 1e-14, "gtol": 1e-11},
    )
    path = _interface_path(interface, float(result.x[0]), float(result.x[1]))
    best = min(best, path_length(np.vstack([a, path, b]), medium))
    logger.debug("Crossing search: %.10f", best)
    return best


def _relax_path(graph: DistanceGraph, medium: MediumSpec, pred: np.ndarray, ids, a, b) -> float:
    chain = []
    v = ids[1]
    while v != ids[0] and v >= 0:
        chain.append(int(v))
        v = pred[v]
    chain = chain[::-1][:-1]
    chain = [v for v in chain if v < graph.n_vertices]
    if not chain:
        return path_length([a, b], medium)
    base = graph.base_of(np.array(chain))
    pts = graph.grid.points()[base]
    on = np.abs(medium.interface.level(pts)) <= 1e-9 * graph.grid.min_spacing
    keep = set(np.linspace(0, len(chain) - 1, min(_RELAX_VERTICES, len(chain))).round().astype(int))
    on_idx = np.flatnonzero(on)
    if on_idx.size:
        keep.update({int(on_idx[0]), int(on_idx[-1])})
    interior = pts[sorted(keep)]
    lower = np.array([lo for lo, _ in medium.domain.bounds] * len(interior))
    upper = np.array([hi for _, hi in medium.domain.bounds] * len(interior))

    def objective(flat: np.ndarray) -> float:
        poly = np.vstack([a, np.clip(flat, lower, upper).reshape(-1, medium.dim), b])
        return path_length(poly, medium, subdivisions=4)

    start = interior.ravel()
    initial = objective(start)
    result = minimize(
        objective,
        start,
        method="L-BFGS-B",
        bounds=list(zip(lower, upper)),
        options={"maxiter": 400, "ftol": 1e-13, "gtol": 1e-10},
    )
    best = min(initial, float(result.fun))
    logger.info("Path relaxation: %.8f -> %.8f (%s)", initial, best, result.message)
    return best


@dataclass(frozen=True)
class DistanceField:
    grid: Grid
    values: np.ndarray

    def max(self) -> float:
        return float(np.max(self.values))

    def rows(self) -> Iterable[Tuple[float, ...]]:
        for point, value in zip(self.grid.points(), self.values):
            yield (*[float(c) for c in point], float(value))


def distance_field(
    region: Region, medium: MediumSpec, resolution: float, *, connectivity: int = 8
) -> DistanceField:
    graph = build_graph(medium, float(resolution), connectivity)
    pts = graph.grid.points()
    sources = np.flatnonzero(region.contains(pts))
    if sources.size == 0:
        raise ArgumentError("source set contains no grid nodes")
    vertices = graph.vertices_for_nodes(sources)
    dist = dijkstra(graph.matrix(), directed=False, indices=vertices, min_only=True)
    values = dist[: graph.grid.size].copy()
    has_copy = graph.minus_copy >= 0
    values[has_copy] = np.minimum(values[has_copy], dist[graph.minus_copy[has_copy]])
    if not np.all(np.isfinite(values)):
        raise GeometryError("distance field has unreachable nodes")
    return DistanceField(graph.grid, values)


def largest_distance(region: Region, medium: MediumSpec, resolution: float, *, connectivity: int = 8) -> float:
    return distance_field(region, medium, resolution, connectivity=connectivity).max()
