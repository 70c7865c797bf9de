"""Uniform node grids over intervals and rectangles.

Nodes include the boundary; Dirichlet elimination happens in the elliptic
module. Flattening follows numpy C order with axis 0 the normal direction of
a straight interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class Grid:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    shape: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise ArgumentError("grid bounds and shape disagree in dimension")
        if any(n < 3 for n in self.shape):
            raise ArgumentError("grid needs at least 3 nodes per axis", shape=list(self.shape))
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ArgumentError("grid extents must be positive")

    @classmethod
    def from_cells(cls, bounds: Sequence[Sequence[float]], cells: Sequence[int]) -> "Grid":
        lower = tuple(float(lo) for lo, _ in bounds)
        upper = tuple(float(hi) for _, hi in bounds)
        return cls(lower=lower, upper=upper, shape=tuple(int(n) + 1 for n in cells))

    @classmethod
    def from_resolution(cls, bounds: Sequence[Sequence[float]], resolution: float) -> "Grid":
        if not resolution > 0:
            raise ArgumentError("resolution must be positive", resolution=resolution)
        cells = [max(2, int(math.ceil((hi - lo) / resolution - 1e-9))) for lo, hi in bounds]
        return cls.from_cells(bounds, cells)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for lo, hi, n in zip(self.lower, self.upper, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.shape)]

    @cached_property
    def _points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    def points(self) -> np.ndarray:
        return self._points

    @cached_property
    def _interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[tuple(slice(1, n - 1) for n in self.shape)] = True
        flat = mask.ravel()
        flat.setflags(write=False)
        return flat

    def interior_mask(self) -> np.ndarray:
        return self._interior

    def node_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(i) for i in multi), self.shape))

    def axis_index(self, axis: int, coordinate: float) -> float:
        """Fractional node index of a coordinate along an axis."""
        return (coordinate - self.lower[axis]) / self.spacing[axis]

    def aligned_index(self, axis: int, coordinate: float, tol: float = 1e-9) -> int | None:
        frac = self.axis_index(axis, coordinate)
        nearest = int(round(frac))
        if abs(frac - nearest) <= tol and 0 <= nearest < self.shape[axis]:
            return nearest
        return None

    def cell_corners(self, x: Sequence[float]) -> np.ndarray:
        """Flat indices of the nodes of the cell containing ``x``."""
        base = []
        for axis in range(self.dim):
            frac = self.axis_index(axis, float(x[axis]))
            i0 = int(np.clip(math.floor(frac), 0, self.shape[axis] - 2))
            base.append((i0, i0 + 1))
        combos = np.array(np.meshgrid(*base, indexing="ij")).reshape(self.dim, -1)
        return np.ravel_multi_index(tuple(combos), self.shape)

    def nearest_node(self, x: Sequence[float]) -> int:
        multi = [
            int(np.clip(round(self.axis_index(axis, float(x[axis]))), 0, self.shape[axis] - 1))
            for axis in range(self.dim)
        ]
        return self.node_index(multi)

    def refined(self) -> "Grid":
        return Grid(self.lower, self.upper, tuple(2 * (n - 1) + 1 for n in self.shape))
