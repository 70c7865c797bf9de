"""Task runners: each validates its block against the medium, then computes and writes CSVs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List

import numpy as np

from core.cache import SpectrumCache
from core.carleman import (
    CarlemanWeight,
    LocalChart,
    carleman_certify,
    check_convexification,
    check_gamma_cover,
    check_subellipticity,
    classify_grid,
    geometric_alpha_ratio,
    m_grid,
    phi,
    phi_prime,
    random_bump_family,
)
from core.config import Settings
from core.control import (
    ControlProblem,
    HumSettings,
    cost_curve,
    hum_control,
    mode_ensemble,
    observe,
    quant_uc_check,
    random_ensemble,
    semiglobal_check,
    stability_check,
    threshold_probe,
    trapping_demo,
    wave_packet,
)
from core.elliptic import DiscreteOperator, Spectrum, assemble, eigendecompose, energy_pair_norms
from core.errors import ConfigurationError, GeometryError, RegionError
from core.grid import Grid
from core.medium import BoundaryRegion, MediumSpec, Side, distance, distance_field
from core.metrics import get_metrics
from core.wavesolver import RecordSpec, SimConfig, WaveState, check_transmission, probe_series, simulate

from .outputs import OutputWriter
from .schema import (
    CarlemanCertifyTask,
    CarlemanRegionsTask,
    CarlemanWeightsTask,
    CostCurveTask,
    DistanceTask,
    ExperimentConfig,
    HumTask,
    ModeEnsemble,
    ModeInit,
    ObservationConfig,
    ObserveTask,
    PacketInit,
    SemiglobalTask,
    SimulateTask,
    SpectrumTask,
    StabilityTask,
    TrappingTask,
    UcCheckTask,
    WeightConfig,
)

logger = logging.getLogger(__name__)


@dataclass
class Prepared:
    config: ExperimentConfig
    medium: MediumSpec
    grid: Grid


def _weight(config: WeightConfig) -> CarlemanWeight:
    return CarlemanWeight(
        config.alpha_minus, config.alpha_plus, config.beta, config.convexification, tuple(config.center)
    )


def _check_region(region, grid: Grid, name: str = "region") -> None:
    if isinstance(region, BoundaryRegion):
        region.stencil(grid)
        return
    interior = grid.points()[grid.interior_mask()]
    if not np.any(region.contains(interior)):
        raise RegionError(f"{name} contains no interior grid nodes")


def _interior_count(grid: Grid) -> int:
    return int(np.count_nonzero(grid.interior_mask()))


def _check_modes(highest: int, grid: Grid) -> None:
    if highest > _interior_count(grid):
        raise ConfigurationError("mode index exceeds the number of interior nodes", k=highest)


def _check_init(init, medium: MediumSpec, grid: Grid) -> None:
    if isinstance(init, ModeInit):
        _check_modes(init.k, grid)
    elif isinstance(init, PacketInit):
        if len(init.center) != medium.dim or len(init.direction) != medium.dim:
            raise ConfigurationError("packet center and direction need one entry per dimension")
        if not medium.domain.contains(np.array([init.center]))[0]:
            raise ConfigurationError("packet center lies outside the domain")
        if not any(init.direction):
            raise ConfigurationError("packet direction must be nonzero")
    else:
        _check_modes(init.modes, grid)


def _check_ensemble(ensemble, grid: Grid) -> None:
    highest = max(ensemble.ks) if isinstance(ensemble, ModeEnsemble) else ensemble.modes
    _check_modes(highest, grid)


def _check_observation(config: ObservationConfig, grid: Grid, *, interior_only: bool = False) -> None:
    region = config.build()
    if interior_only and isinstance(region, BoundaryRegion):
        raise ConfigurationError("controls act on interior boxes, not on a boundary face")
    _check_region(region, grid)


def prepare(config: ExperimentConfig) -> Prepared:
    """Build the medium and grid and validate every task parameter, before any heavy compute."""
    medium = config.medium.build()
    grid = config.grid.build(medium)
    task = config.task
    if getattr(task, "init", None) is not None:
        _check_init(task.init, medium, grid)
    if getattr(task, "ensemble", None) is not None:
        _check_ensemble(task.ensemble, grid)
    if getattr(task, "region", None) is not None:
        _check_observation(task.region, grid, interior_only=isinstance(task, (HumTask, CostCurveTask)))
    if isinstance(task, SimulateTask):
        for probe in task.probes:
            if len(probe) != medium.dim or not medium.domain.contains(np.array([probe]))[0]:
                raise ConfigurationError("probe must be a point of the domain", probe=probe)
    elif isinstance(task, DistanceTask):
        for a, b in task.pairs:
            if len(a) != medium.dim or len(b) != medium.dim:
                raise ConfigurationError("distance endpoints need one coordinate per dimension")
        if task.sources is not None:
            sources = task.sources.build()
            if not np.any(sources.contains(grid.points())):
                raise RegionError("distance sources contain no grid nodes")
    elif isinstance(task, SpectrumTask):
        _check_modes(task.k, grid)
    elif isinstance(task, SemiglobalTask):
        if task.eta > task.T:
            raise ConfigurationError("eta must not exceed T", eta=task.eta, T=task.T)
    elif isinstance(task, (HumTask, CostCurveTask)):
        eps_values = [task.eps_ctl] if isinstance(task, HumTask) else task.eps
        if any(not 0 < e <= 1 for e in eps_values):
            raise ConfigurationError("targets must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps_values, eps_values[1:])):
            raise ConfigurationError("targets must be strictly decreasing")
    elif isinstance(task, CarlemanRegionsTask):
        if len(task.point) != medium.dim:
            raise ConfigurationError("point needs one coordinate per dimension")
    elif isinstance(task, CarlemanWeightsTask):
        _weight(task.weight)
        if medium.dim != 2:
            raise GeometryError("weight checks need tangential frequencies: use a two-dimensional medium")
        if not 1 < task.mu < task.mu0:
            raise ConfigurationError("cover needs 1 < mu < mu0", mu=task.mu, mu0=task.mu0)
    elif isinstance(task, CarlemanCertifyTask):
        weight = _weight(task.weight)
        if weight.x0.size != medium.dim:
            raise ConfigurationError("weight center is (t0, x0...) with one space coordinate per dimension")
        if any(tau < 1 for tau in task.taus):
            raise ConfigurationError("Carleman parameters must be at least 1")
        if task.time_window[2] < 3:
            raise ConfigurationError("time window needs at least three samples")
        LocalChart.from_medium(medium, grid)
    elif isinstance(task, TrappingTask):
        if medium.dim != 2:
            raise GeometryError("trapping demo needs a two-dimensional medium")
        angle = math.radians(task.angle) if task.degrees else task.angle
        if angle >= 0.5 * math.pi:
            raise ConfigurationError("incidence angle must lie in [0, pi/2)")
    return Prepared(config, medium, grid)


@dataclass
class TaskContext:
    prepared: Prepared
    settings: Settings
    writer: OutputWriter
    summary: Dict[str, object] = field(default_factory=dict)

    @property
    def config(self) -> ExperimentConfig:
        return self.prepared.config

    @property
    def medium(self) -> MediumSpec:
        return self.prepared.medium

    @property
    def grid(self) -> Grid:
        return self.prepared.grid

    @cached_property
    def operator(self) -> DiscreteOperator:
        with get_metrics().phase("assemble"):
            return assemble(self.medium, self.grid, power_iterations=self.settings.power_iterations)

    def spectrum(self, k: int) -> Spectrum:
        cache = SpectrumCache(self.settings.cache_dir) if self.settings.spectrum_cache else None
        try:
            with get_metrics().phase("eigensolve"):
                return eigendecompose(self.operator, k, cache=cache)
        finally:
            if cache is not None:
                cache.close()

    def initial_state(self, init) -> WaveState:
        if isinstance(init, ModeInit):
            return WaveState.at_rest(init.amplitude * self.spectrum(init.k).mode(init.k))
        if isinstance(init, PacketInit):
            return wave_packet(self.operator, init.center, init.direction, init.wavenumber, init.width)
        return random_ensemble(self.spectrum(init.modes), 1, seed=self.config.seed, modes=init.modes)[0]

    def ensemble(self, config) -> List[WaveState]:
        if isinstance(config, ModeEnsemble):
            return mode_ensemble(self.spectrum(max(config.ks)), config.ks)
        return random_ensemble(self.spectrum(config.modes), config.count, seed=self.config.seed, modes=config.modes)

    def problem(self, task, **overrides) -> ControlProblem:
        hum = getattr(task, "hum", None)
        settings = HumSettings(hum.penalty, hum.cg_tol, hum.max_iter) if hum is not None else HumSettings()
        values = dict(
            region=task.region.build(),
            T=task.T,
            hum=settings,
            cfl_fraction=self.config.grid.cfl_fraction,
        )
        values.update(overrides)
        return ControlProblem(**values)


def run_simulate(ctx: TaskContext, task: SimulateTask) -> None:
    operator = ctx.operator
    init = ctx.initial_state(task.init)
    every = 1 if task.transmission else task.snapshot_every
    record = RecordSpec(snapshot_every=every, probes=tuple(tuple(p) for p in task.probes))
    config = SimConfig(T=task.T, dt=task.dt, cfl_fraction=ctx.config.grid.cfl_fraction, record=record)
    with get_metrics().phase("simulate"):
        trajectory = simulate(operator, init, config)
    energy = trajectory.energy
    drift = float(np.max(np.abs(energy - energy[0])) / energy[0]) if energy.size and energy[0] > 0 else 0.0
    half_times = trajectory.times[:-1] + 0.5 * trajectory.dt
    ctx.writer.csv(
        "energy.csv",
        ["step", "time", "energy"],
        ((n, t, e) for n, (t, e) in enumerate(zip(half_times, energy))),
        dt=repr(trajectory.dt),
        relative_drift=repr(drift),
    )
    ctx.writer.plot("energy.svg", half_times, {"energy": energy}, xlabel="t", ylabel="E")
    if task.probes:
        keys = [tuple(float(c) for c in p) for p in task.probes]
        series = [probe_series(trajectory, key) for key in keys]
        header = ["time"] + [f"probe_{k}" for k in range(len(keys))]
        ctx.writer.csv("probes.csv", header, (row for row in zip(trajectory.times, *series)))
    if task.transmission:
        report = check_transmission(trajectory)
        ctx.writer.csv(
            "transmission.csv",
            ["quantity", "value"],
            [
                ("displacement_jump", report.displacement_jump),
                ("flux_jump", report.flux_jump),
                ("reconstructed_jump", report.reconstructed_jump),
                ("samples", report.samples),
            ],
        )
    ctx.summary.update(steps=trajectory.steps, dt=trajectory.dt, relative_drift=drift)


def run_distance(ctx: TaskContext, task: DistanceTask) -> None:
    resolution = ctx.config.grid.resolution
    if task.pairs:
        rows = []
        for a, b in task.pairs:
            value = distance(a, b, ctx.medium, resolution, connectivity=task.connectivity, refine=task.refine)
            rows.append((*a, *b, value))
        dim = ctx.medium.dim
        header = [f"x0_{i}" for i in range(dim)] + [f"x1_{i}" for i in range(dim)] + ["distance"]
        ctx.writer.csv("distance.csv", header, rows)
    if task.sources is not None:
        distances = distance_field(task.sources.build(), ctx.medium, resolution, connectivity=task.connectivity)
        header = ["x", "y"][: ctx.medium.dim] + ["distance"]
        ctx.writer.csv("distance_field.csv", header, distances.rows(), largest=repr(distances.max()))
        ctx.summary["largest_distance"] = distances.max()


def run_spectrum(ctx: TaskContext, task: SpectrumTask) -> None:
    spectrum = ctx.spectrum(task.k)
    rows = list(spectrum.rows())
    ctx.writer.csv("spectrum.csv", ["k", "eigenvalue"], rows, complete=spectrum.complete)
    ctx.writer.plot("spectrum.svg", [k for k, _ in rows], {"eigenvalue": [v for _, v in rows]}, xlabel="k", ylabel="λ_k")
    ctx.summary["lambda_1"] = float(spectrum.eigenvalues[0])


def run_observe(ctx: TaskContext, task: ObserveTask) -> None:
    init = ctx.initial_state(task.init)
    value = observe(init, ctx.problem(task), ctx.operator)
    high, low = energy_pair_norms(init.u, init.v, ctx.operator)
    ctx.writer.csv(
        "observe.csv",
        ["quantity", "value"],
        [("observation", value), ("data_h1_l2", high), ("data_l2_hm1", low)],
    )
    ctx.summary["observation"] = value


def run_uc_check(ctx: TaskContext, task: UcCheckTask) -> None:
    problem = ctx.problem(task)
    ensemble = ctx.ensemble(task.ensemble)
    report = quant_uc_check(
        ensemble, problem, ctx.operator, task.mus, task.kappa, ctx.operator, max_workers=ctx.settings.max_workers
    )
    ctx.writer.csv(
        "uc_check.csv",
        ["mu", "constant", "binding_member"],
        report.rows(),
        kappa=repr(task.kappa),
        largest_distance=repr(report.L),
        below_threshold=report.below_threshold,
    )
    ctx.writer.csv(
        "uc_members.csv",
        ["member", "data_h1_l2", "data_l2_hm1", "observation"],
        ((k, *row) for k, row in enumerate(report.members)),
    )
    ctx.writer.plot("uc_check.svg", report.mus, {"C": report.constants}, xlabel="μ", ylabel="C(μ)", logy=True)
    ctx.summary.update(feasible=report.feasible, below_threshold=report.below_threshold, largest_distance=report.L)
    if task.probe is not None:
        packet = ctx.initial_state(task.probe)
        probe = threshold_probe(packet, problem, ctx.operator, ctx.operator)
        ctx.writer.csv(
            "threshold_probe.csv",
            ["T", "ratio"],
            [(probe.short_T, probe.short_ratio), (probe.long_T, probe.long_ratio)],
            contrast=probe.contrast,
        )
        ctx.summary["threshold_contrast"] = probe.contrast


def run_stability(ctx: TaskContext, task: StabilityTask) -> None:
    report = stability_check(
        ctx.ensemble(task.ensemble), ctx.problem(task), ctx.operator, ctx.operator, max_workers=ctx.settings.max_workers
    )
    unobserved = set(report.unobserved)
    ctx.writer.csv(
        "stability.csv",
        ["member", "typical_frequency", "data_h1_l2", "data_l2_hm1", "observation", "observed"],
        ((k, *row, k not in unobserved) for k, row in enumerate(report.rows)),
        exponential_constant=repr(report.exponential_constant),
        log_constant=repr(report.log_constant),
        exponential_binding=report.exponential_binding,
        log_binding=report.log_binding,
    )
    ctx.summary.update(exponential_constant=report.exponential_constant, log_constant=report.log_constant)


def run_semiglobal(ctx: TaskContext, task: SemiglobalTask) -> None:
    report = semiglobal_check(
        ctx.ensemble(task.ensemble),
        ctx.problem(task),
        ctx.operator,
        task.mus,
        task.kappa,
        task.eta,
        max_workers=ctx.settings.max_workers,
    )
    ctx.writer.csv("semiglobal.csv", ["mu", "constant", "binding_member"], report.rows(), eta=repr(task.eta))
    ctx.writer.csv(
        "semiglobal_members.csv",
        ["member", "local_l2", "observation", "h1"],
        ((k, *row) for k, row in enumerate(report.members)),
    )
    ctx.summary["max_constant"] = float(np.max(report.constants))


def run_hum(ctx: TaskContext, task: HumTask) -> None:
    init = ctx.initial_state(task.init)
    problem = ctx.problem(task, eps_ctl=task.eps_ctl)
    with get_metrics().phase("control"):
        result = hum_control(init, problem, ctx.operator)
    ctx.writer.csv(
        "hum.csv",
        ["iteration", "objective"],
        enumerate(result.objective),
        cost=repr(result.cost),
        ratio=repr(result.ratio),
        penalty=repr(result.penalty),
        converged=result.converged,
    )
    dt = problem.T / result.steps
    profile = np.sqrt(ctx.operator.weight * np.sum(result.control**2, axis=1))
    ctx.writer.csv("control_profile.csv", ["time", "control_norm"], ((n * dt, v) for n, v in enumerate(profile)))
    ctx.writer.plot("hum.svg", list(range(len(result.objective))), {"J": result.objective}, xlabel="iteration", ylabel="J", logy=True)
    ctx.summary.update(cost=result.cost, ratio=result.ratio, iterations=result.iterations, achieved=result.achieved)


def run_cost_curve(ctx: TaskContext, task: CostCurveTask) -> None:
    init = ctx.initial_state(task.init)
    with get_metrics().phase("control"):
        curve = cost_curve(init, ctx.problem(task, eps_ctl=task.eps[0]), task.eps, ctx.operator)
    ctx.writer.csv(
        "cost_curve.csv",
        ["eps", "cost", "ratio", "achieved", "penalty"],
        ((r.eps, r.cost, r.ratio, r.achieved, r.penalty) for r in curve.rows),
        slope=repr(curve.slope),
        intercept=repr(curve.intercept),
        fit_residual=repr(curve.residual),
    )
    inverse = [1.0 / r.eps for r in curve.rows]
    ctx.writer.plot("cost_curve.svg", inverse, {"cost": [r.cost for r in curve.rows]}, xlabel="1/ε", ylabel="‖f‖", logy=True)
    ctx.summary.update(slope=curve.slope, fit_residual=curve.residual)


def run_carleman_regions(ctx: TaskContext, task: CarlemanRegionsTask) -> None:
    lo, hi, count = task.xi_prime
    xi_prime_axis = np.linspace(lo, hi, count) if ctx.medium.dim > 1 else np.zeros(1)
    lo, hi, count = task.xi_t
    xi_t_axis = np.linspace(lo, hi, count)
    xp, xt = (a.ravel() for a in np.meshgrid(xi_prime_axis, xi_t_axis, indexing="ij"))
    keep = (xp != 0) | (xt != 0)
    xp, xt = xp[keep], xt[keep]
    flags = classify_grid(ctx.medium, task.point, xp, xt, task.eps)
    m_minus, m_plus = m_grid(ctx.medium, task.point, xp, xt, task.eps)
    names = ["elliptic_minus", "elliptic_plus", "glancing_minus", "glancing_plus"]
    rows = zip(xp, xt, *(flags[name] for name in names), m_minus, m_plus)
    extra = {}
    try:
        ratio = geometric_alpha_ratio(ctx.medium, task.eps, task.ratio_samples)
        extra["sup_ratio"] = repr(ratio)
        ctx.summary["sup_ratio"] = ratio
    except RegionError as exc:
        logger.warning("No geometric ratio: %s", exc.detail)
    ctx.writer.csv("regions.csv", ["xi_prime", "xi_t", *names, "m_minus", "m_plus"], rows, eps=repr(task.eps), **extra)


def run_carleman_weights(ctx: TaskContext, task: CarlemanWeightsTask) -> None:
    weight = _weight(task.weight)
    lo, hi = ctx.medium.domain.bounds[0]
    x_n = np.linspace(lo, hi, task.profile_samples) - weight.x0[0]
    slopes = np.where(
        x_n < 0,
        phi_prime(np.minimum(x_n, 0.0), Side.MINUS, weight),
        phi_prime(np.maximum(x_n, 0.0), Side.PLUS, weight),
    )
    ctx.writer.csv("weight_profile.csv", ["x_n", "phi", "phi_prime"], zip(x_n, phi(x_n, Side.AUTO, weight), slopes))
    cover = check_gamma_cover(weight, ctx.medium, task.eps, task.mu, task.mu0, task.eta)
    ctx.writer.csv(
        "gamma_cover.csv",
        ["tau", "margin"],
        cover.rows,
        overlap=repr(cover.overlap),
        holds=cover.holds,
        constant=repr(cover.constant),
        tau0=cover.tau0,
        sup_ratio=repr(cover.sup_ratio),
        witness=cover.witness,
    )
    sub = check_subellipticity(weight, ctx.medium, task.eps, task.mu, task.eta)
    ctx.writer.csv("subellipticity.csv", ["quantity", "value"], [("margin", sub.margin), ("checked", sub.checked)])
    ctx.summary.update(cover_holds=cover.holds, cover_overlap=cover.overlap, subellipticity_margin=sub.margin)
    if task.R is not None:
        convex = check_convexification(weight, task.R)
        ctx.writer.csv(
            "convexification.csv",
            ["quantity", "value"],
            [
                ("delta", convex.delta),
                ("rho", convex.rho),
                ("r", convex.r),
                ("annulus_ok", convex.annulus_ok),
                ("band_ok", convex.band_ok),
                ("ball_ok", convex.ball_ok),
            ],
        )
        ctx.summary["convexification_ok"] = convex.ok


def run_carleman_certify(ctx: TaskContext, task: CarlemanCertifyTask) -> None:
    weight = _weight(task.weight)
    lo, hi, count = task.time_window
    times = np.linspace(lo, hi, count)
    family = random_bump_family(ctx.medium, ctx.grid, times, weight.center, task.radius, task.count, seed=ctx.config.seed)
    with get_metrics().phase("certify"):
        report = carleman_certify(family, weight, task.delta, task.taus, ctx.medium, r0=task.r0)
    ctx.writer.csv(
        "certify.csv",
        ["tau", "constant"],
        report.rows,
        degenerate=report.degenerate,
        sup_constant=repr(report.sup_constant),
        growing=report.growing,
        settled_tau=report.settled_tau,
    )
    ctx.writer.plot(
        "certify.svg", [t for t, _ in report.rows], {"C": [c for _, c in report.rows]}, xlabel="τ", ylabel="C", logx=True
    )
    ctx.summary.update(sup_constant=report.sup_constant, growing=report.growing)


def run_trapping(ctx: TaskContext, task: TrappingTask) -> None:
    angle = math.radians(task.angle) if task.degrees else task.angle
    report = trapping_demo(ctx.operator, angle, task.frequency, width=task.width, cfl_fraction=ctx.config.grid.cfl_fraction)
    analytic = report.analytic
    ctx.writer.csv(
        "trapping.csv",
        ["quantity", "measured", "analytic"],
        [
            ("reflected", report.reflected, analytic.reflected_energy),
            ("transmitted", report.transmitted, analytic.transmitted_energy),
            ("transmitted_region", report.transmitted_region, analytic.transmitted_energy),
            ("band", report.band, 0.0),
            ("closure", report.closure, 0.0),
        ],
        angle=repr(angle),
        critical_angle=analytic.critical_angle,
        horizon=repr(report.horizon),
    )
    ctx.summary.update(
        reflected=report.reflected,
        transmitted=report.transmitted,
        band=report.band,
        closure=report.closure,
        analytic_transmitted=analytic.transmitted_energy,
    )


TASKS: Dict[str, Callable[[TaskContext, object], None]] = {
    "simulate": run_simulate,
    "distance": run_distance,
    "spectrum": run_spectrum,
    "observe": run_observe,
    "uc-check": run_uc_check,
    "stability": run_stability,
    "semiglobal": run_semiglobal,
    "hum": run_hum,
    "cost-curve": run_cost_curve,
    "carleman-regions": run_carleman_regions,
    "carleman-weights": run_carleman_weights,
    "carleman-certify": run_carleman_certify,
    "trapping": run_trapping,
}


def run_task(ctx: TaskContext) -> Dict[str, object]:
    task = ctx.config.task
    logger.info("Running task %s on a %s grid", task.name, "x".join(str(n) for n in ctx.grid.shape))
    TASKS[task.name](ctx, task)
    return ctx.summary
