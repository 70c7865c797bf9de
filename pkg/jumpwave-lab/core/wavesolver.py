"""Leapfrog time stepping for the transmission wave system.

The scheme is u^{n+1} = 2u^n − u^{n−1} + dt²(−Au^n + f^n) started by the
Taylor step u^1 = u^0 + dt·u_1 + (dt²/2)(−Au^0 + f^0). Velocities are
reported as v^n = (u^n − u^{n−1})/dt + (dt/2)(−Au^n + f^n), which makes a
restart from (u^N, −v^N) replay the run backwards exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .elliptic import DiscreteOperator
from .errors import ArgumentError, ConfigurationError
from .medium import BoundaryRegion, Region
from .metrics import get_metrics

logger = logging.getLogger(__name__)

Source = Union[None, np.ndarray, Callable[[float], np.ndarray]]


@dataclass
class WaveState:
    u: np.ndarray
    v: np.ndarray
    time: float = 0.0

    @classmethod
    def at_rest(cls, u: np.ndarray) -> "WaveState":
        return cls(np.asarray(u, dtype=float), np.zeros_like(u, dtype=float))

    def reversed(self) -> "WaveState":
        return WaveState(self.u.copy(), -self.v, self.time)


@dataclass(frozen=True)
class RecordSpec:
    regions: Tuple[Region, ...] = ()
    boundaries: Tuple[BoundaryRegion, ...] = ()
    snapshot_every: Optional[int] = None
    probes: Tuple[Tuple[float, ...], ...] = ()


@dataclass
class SimConfig:
    T: float
    dt: Optional[float] = None
    cfl_fraction: float = 0.9
    source: Source = None
    record: RecordSpec = field(default_factory=RecordSpec)

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ConfigurationError("horizon must be nonnegative", T=self.T)
        if not 0 < self.cfl_fraction <= 1:
            raise ConfigurationError("cfl_fraction must lie in (0, 1]", cfl_fraction=self.cfl_fraction)
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError("time step must be positive", dt=self.dt)


@dataclass
class Trajectory:
    operator: DiscreteOperator
    dt: float
    times: np.ndarray
    energy: np.ndarray
    initial: WaveState
    final: WaveState
    snapshot_times: List[float] = field(default_factory=list)
    snapshots: List[np.ndarray] = field(default_factory=list)
    velocities: List[np.ndarray] = field(default_factory=list)
    observations: Dict[Region, np.ndarray] = field(default_factory=dict)
    boundary_traces: Dict[BoundaryRegion, np.ndarray] = field(default_factory=dict)
    probes: Dict[Tuple[float, ...], np.ndarray] = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return int(self.times.shape[0] - 1)

    def time_weights(self) -> np.ndarray:
        weights = np.full(self.times.shape, self.dt)
        if weights.size == 1:
            return np.zeros(1)
        weights[0] = weights[-1] = 0.5 * self.dt
        return weights


def cfl_limit(operator: DiscreteOperator, cfl_fraction: float = 1.0) -> float:
    return cfl_fraction * 2.0 / math.sqrt(operator.lambda_max)


def check_cfl(operator: DiscreteOperator, dt: float, cfl_fraction: float = 1.0) -> None:
    limit = cfl_limit(operator, cfl_fraction)
    if dt > limit * (1.0 + 1e-12):
        raise ConfigurationError(
            "time step violates the CFL bound",
            dt=dt,
            limit=limit,
            lambda_max=operator.lambda_max,
        )


def step(
    u_prev: np.ndarray,
    u_curr: np.ndarray,
    operator: DiscreteOperator,
    dt: float,
    source: Optional[np.ndarray] = None,
    *,
    cfl_fraction: float = 1.0,
) -> np.ndarray:
    check_cfl(operator, dt, cfl_fraction)
    accel = -operator.apply(u_curr)
    if source is not None:
        accel = accel + source
    return 2.0 * u_curr - u_prev + dt * dt * accel


def resolve_steps(operator: DiscreteOperator, config: SimConfig) -> Tuple[float, int]:
    dt = config.dt if config.dt is not None else cfl_limit(operator, config.cfl_fraction)
    check_cfl(operator, dt, config.cfl_fraction)
    if config.T == 0:
        return dt, 0
    n_steps = max(1, int(math.ceil(config.T / dt - 1e-9)))
    return config.T / n_steps, n_steps


def _source_at(source: Source, n: int, t: float, dof: int) -> Optional[np.ndarray]:
    if source is None:
        return None
    if callable(source):
        return np.asarray(source(t), dtype=float)
    return source[n]


def region_nodes(operator: DiscreteOperator, region: Region) -> np.ndarray:
    nodes = np.flatnonzero(region.contains(operator.interior_points()))
    if nodes.size == 0:
        raise ArgumentError("observation region contains no interior grid nodes")
    return nodes


def normal_derivative(operator: DiscreteOperator, u: np.ndarray, boundary: BoundaryRegion) -> np.ndarray:
    """Outward normal derivative by the second-order one-sided difference quotient."""
    full = operator.to_grid(u)
    b, i1, i2, _ = boundary.stencil(operator.grid)
    h = operator.grid.spacing[boundary.axis]
    return (3.0 * full[b] - 4.0 * full[i1] + full[i2]) / (2.0 * h)


def simulate(operator: DiscreteOperator, init: WaveState, config: SimConfig) -> Trajectory:
    dt, n_steps = resolve_steps(operator, config)
    dof = operator.dof
    u0 = np.asarray(init.u, dtype=float)
    u1 = np.asarray(init.v, dtype=float)
    if u0.shape != (dof,) or u1.shape != (dof,):
        raise ArgumentError("initial data must live on the operator's interior nodes", expected=dof)
    if isinstance(config.source, np.ndarray) and config.source.shape != (n_steps + 1, dof):
        raise ArgumentError("source array must have shape (steps + 1, dof)", expected=[n_steps + 1, dof])

    t0 = init.time
    times = t0 + dt * np.arange(n_steps + 1)
    record = config.record
    observed_nodes = {region: region_nodes(operator, region) for region in record.regions}
    observations = {region: np.empty((n_steps + 1, nodes.size)) for region, nodes in observed_nodes.items()}
    traces = {
        boundary: np.empty((n_steps + 1, boundary.stencil(operator.grid)[0].size)) for boundary in record.boundaries
    }
    interior_lookup = np.full(operator.grid.size, -1)
    interior_lookup[operator.interior] = np.arange(dof)
    probe_nodes = {}
    for probe in record.probes:
        node = interior_lookup[operator.grid.nearest_node(probe)]
        if node < 0:
            raise ArgumentError("probe sits on the boundary", probe=list(probe))
        probe_nodes[tuple(float(c) for c in probe)] = node
    probes = {probe: np.empty(n_steps + 1) for probe in probe_nodes}
    energy = np.empty(n_steps)
    trajectory = Trajectory(
        operator=operator,
        dt=dt,
        times=times,
        energy=energy,
        initial=WaveState(u0.copy(), u1.copy(), t0),
        final=WaveState(u0.copy(), u1.copy(), t0),
        observations=observations,
        boundary_traces=traces,
        probes=probes,
    )

    def _record(n: int, u: np.ndarray, v: np.ndarray) -> None:
        for region, nodes in observed_nodes.items():
            observations[region][n] = u[nodes]
        for boundary in traces:
            traces[boundary][n] = normal_derivative(operator, u, boundary)
        for probe, node in probe_nodes.items():
            probes[probe][n] = u[node]
        every = record.snapshot_every
        if every and (n % every == 0 or n == n_steps):
            trajectory.snapshot_times.append(float(times[n]))
            trajectory.snapshots.append(u.copy())
            trajectory.velocities.append(v.copy())

    f = _source_at(config.source, 0, times[0], dof)
    accel = -operator.apply(u0) if f is None else f - operator.apply(u0)
    _record(0, u0, u1)
    if n_steps == 0:
        return trajectory

    u_prev = u0
    u_curr = u0 + dt * u1 + 0.5 * dt * dt * accel
    au_prev = -accel if f is None else f - accel
    for n in range(1, n_steps + 1):
        diff = (u_curr - u_prev) / dt
        energy[n - 1] = 0.5 * operator.inner(diff, diff) + 0.5 * operator.inner(au_prev, u_curr)
        f = _source_at(config.source, n, times[n], dof)
        au_curr = operator.apply(u_curr)
        accel = -au_curr if f is None else f - au_curr
        v_curr = diff + 0.5 * dt * accel
        _record(n, u_curr, v_curr)
        if n == n_steps:
            trajectory.final = WaveState(u_curr.copy(), v_curr, float(times[n]))
            break
        u_prev, u_curr = u_curr, 2.0 * u_curr - u_prev + dt * dt * accel
        au_prev = au_curr
    get_metrics().record_steps(n_steps)
    logger.debug("Simulated %d steps, dt=%.3e", n_steps, dt)
    return trajectory


def energy(trajectory: Trajectory) -> np.ndarray:
    return trajectory.energy.copy()


def energy_partition(operator: DiscreteOperator, u_n: np.ndarray, u_next: np.ndarray, dt: float) -> np.ndarray:
    """Node-local split of E_{n+1/2}; the entries sum to the conserved energy."""
    diff = (u_next - u_n) / dt
    return 0.5 * operator.weight * (diff * diff + operator.apply(u_n) * u_next)


def column_region(operator: DiscreteOperator, column: int) -> Region:
    """The grid line x = x_column as an observation region."""
    grid = operator.grid
    if not 1 <= column <= grid.shape[0] - 2:
        raise ArgumentError("column must be an interior grid line", column=column)
    x = float(grid.axes()[0][column])
    h = grid.spacing[0]
    others = [(lo, hi) for lo, hi in zip(grid.lower[1:], grid.upper[1:])]
    return Region.box((x - 0.25 * h, x + 0.25 * h), *others)


def line_inflow(trajectory: Trajectory, column: int) -> float:
    """Energy that crossed from column to column + 1 over the run.

    Both columns must have been recorded as regions (see ``column_region``).
    The sum is the exact leapfrog balance of E_{n+1/2} restricted to the
    nodes right of the line, so it telescopes from step 1/2 to N − 1/2.
    """
    operator = trajectory.operator
    grid = operator.grid
    left_region, right_region = column_region(operator, column), column_region(operator, column + 1)
    if left_region not in trajectory.observations or right_region not in trajectory.observations:
        raise ArgumentError("both sides of the line must be recorded", column=column)
    if trajectory.steps < 2:
        return 0.0
    left = trajectory.observations[left_region]
    right = trajectory.observations[right_region]
    faces = operator.face_coefficients[0].reshape(grid.shape[0] - 1, -1)[column]
    cross = 1.0
    if grid.dim == 2:
        faces = faces[1:-1]
        cross = grid.spacing[1]
    gradient = (right[1:-1] - left[1:-1]) / grid.spacing[0]
    velocity = (right[2:] - right[:-2]) / (2.0 * trajectory.dt)
    return -trajectory.dt * cross * float(np.sum(faces[None, :] * gradient * velocity))


def record_observation(trajectory: Trajectory, region: Region | BoundaryRegion) -> float:
    weights = trajectory.time_weights()
    operator = trajectory.operator
    if isinstance(region, BoundaryRegion):
        if region not in trajectory.boundary_traces:
            raise ArgumentError("boundary set was not recorded", face=region.face)
        face_weights = region.stencil(operator.grid)[3]
        values = trajectory.boundary_traces[region]
        total = float(np.sum(weights[:, None] * face_weights[None, :] * values**2))
        return math.sqrt(total)
    if region in trajectory.observations:
        values = trajectory.observations[region]
    elif trajectory.snapshots and len(trajectory.snapshots) == trajectory.steps + 1:
        nodes = region_nodes(operator, region)
        values = np.stack([u[nodes] for u in trajectory.snapshots])
    else:
        raise ArgumentError("region was not recorded on this trajectory")
    if values.shape[1] == 0:
        raise ArgumentError("observation region is empty")
    total = float(np.sum(weights[:, None] * values**2)) * operator.weight
    return math.sqrt(total)


@dataclass(frozen=True)
class InterfaceFluxes:
    displacement_jump: float
    flux_jump: float
    reconstructed_jump: float


@dataclass(frozen=True)
class TransmissionReport:
    displacement_jump: float
    flux_jump: float
    reconstructed_jump: float
    samples: int


def interface_fluxes(operator: DiscreteOperator, values: np.ndarray, source: Optional[np.ndarray] = None) -> InterfaceFluxes:
    """Jumps across the interface column for one full-grid state."""
    grid = operator.grid
    s = operator.interface_index
    hx = grid.spacing[0]
    full = np.asarray(values, dtype=float).reshape(grid.shape[0], -1)
    faces = operator.face_coefficients[0].reshape(grid.shape[0] - 1, -1)
    rows = slice(None) if grid.dim == 1 else slice(1, -1)
    u_l, u_s, u_r = full[s - 1, rows], full[s, rows], full[s + 1, rows]
    flux_left = faces[s - 1, rows] * (u_s - u_l) / hx
    flux_right = faces[s, rows] * (u_r - u_s) / hx

    index = np.arange(grid.size).reshape(grid.shape[0], -1)
    column = index[s, rows]
    accel = -(operator.full @ full.ravel())[column]
    if source is not None:
        accel = accel + operator.to_grid(source)[column]

    coefficient = operator.medium.coefficient
    tang_minus = tang_plus = np.zeros_like(u_s)
    if grid.dim == 2:
        hy = grid.spacing[1]
        line = full[s]
        line_pts = grid.points()[index[s]]
        divergences = []
        for branch in (coefficient.minus, coefficient.plus):
            c = branch(line_pts)
            k = 2.0 * c[:-1] * c[1:] / (c[:-1] + c[1:])
            divergences.append((k[1:] * (line[2:] - line[1:-1]) - k[:-1] * (line[1:-1] - line[:-2])) / hy**2)
        tang_minus, tang_plus = divergences
    flux_from_minus = flux_left + 0.5 * hx * (accel - tang_minus)
    flux_from_plus = flux_right - 0.5 * hx * (accel - tang_plus)

    node_pts = grid.points()[column]
    one_sided = coefficient.minus(node_pts) * (u_s - u_l) / hx - coefficient.plus(node_pts) * (u_r - u_s) / hx
    # both traces read the shared interface node
    trace_minus = full[s, rows]
    trace_plus = full[s, rows]
    return InterfaceFluxes(
        displacement_jump=float(np.max(np.abs(trace_minus - trace_plus))),
        flux_jump=float(np.max(np.abs(flux_from_minus - flux_from_plus))),
        reconstructed_jump=float(np.max(np.abs(one_sided))),
    )


def check_transmission(trajectory: Trajectory) -> TransmissionReport:
    if not trajectory.snapshots:
        raise ArgumentError("transmission check needs recorded snapshots")
    operator = trajectory.operator
    worst = [0.0, 0.0, 0.0]
    for u in trajectory.snapshots:
        fluxes = interface_fluxes(operator, operator.to_grid(u))
        worst[0] = max(worst[0], fluxes.displacement_jump)
        worst[1] = max(worst[1], fluxes.flux_jump)
        worst[2] = max(worst[2], fluxes.reconstructed_jump)
    return TransmissionReport(worst[0], worst[1], worst[2], len(trajectory.snapshots))


def probe_arrival(trajectory: Trajectory, probe: Sequence[float]) -> float:
    """Time of the largest recorded amplitude at a probe."""
    series = probe_series(trajectory, probe)
    return float(trajectory.times[int(np.argmax(np.abs(series)))])


def probe_series(trajectory: Trajectory, probe: Sequence[float]) -> np.ndarray:
    series = trajectory.probes.get(tuple(float(c) for c in probe))
    if series is None:
        raise ArgumentError("probe was not recorded", probe=list(probe))
    return series.copy()
