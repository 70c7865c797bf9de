import math

import numpy as np
import pytest

from core.control import (
    ControlProblem,
    HumSettings,
    HumSystem,
    adjoint_check,
    cost_curve,
    gradient_check,
    hum_control,
    log_modulus,
    mode_ensemble,
    observe,
    plane_wave_coefficients,
    quant_uc_check,
    random_ensemble,
    semiglobal_check,
    single_mode_observation,
    stability_check,
    threshold_probe,
    threshold_time,
    trapping_demo,
    wave_packet,
)
from core.elliptic import assemble, eigendecompose
from core.errors import ArgumentError, ConfigurationError, GeometryError, PartialResultError
from core.grid import Grid
from core.medium import BoundaryRegion, Domain, InterfaceSpec, MediumSpec, PiecewiseCoefficient, Region
from core.wavesolver import WaveState

LEFT = Region.box((0.0, 0.25))


def _build_operator(cells=16):
    medium = MediumSpec(
        Domain.interval(0.0, 1.0),
        InterfaceSpec.point(0.5),
        PiecewiseCoefficient.constant(1.0, 4.0),
    ).validate()
    return assemble(medium, Grid.from_cells(((0.0, 1.0),), (cells,)))


def _first_mode(operator):
    spectrum = eigendecompose(operator, 3)
    return spectrum, WaveState.at_rest(spectrum.mode(1))


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        ControlProblem(LEFT, 0.0)
    with pytest.raises(ConfigurationError):
        ControlProblem(LEFT, 1.0, eps_ctl=0.0)
    assert ControlProblem(LEFT, 1.0, eps_ctl=1.0).eps_ctl == 1.0


def test_observe_matches_single_mode_formula():
    operator = _build_operator(32)
    spectrum, state = _first_mode(operator)
    problem = ControlProblem(Region.whole(operator.medium.domain), 1.5)
    value = observe(state, problem, operator)
    assert value == pytest.approx(single_mode_observation(math.sqrt(spectrum.eigenvalues[0]), 1.5), rel=1e-2)


def test_observe_is_linear():
    operator = _build_operator()
    _, state = _first_mode(operator)
    problem = ControlProblem(LEFT, 1.0)
    doubled = WaveState(2.0 * state.u, 2.0 * state.v)
    assert observe(doubled, problem, operator) == pytest.approx(2.0 * observe(state, problem, operator), rel=1e-12)


def test_threshold_time_from_left_strip():
    operator = _build_operator(32)
    L, threshold = threshold_time(LEFT, operator)
    assert L == pytest.approx(0.5, abs=0.02)
    assert threshold == pytest.approx(2.0 * L + 4.0 / 32)


def test_ensembles():
    operator = _build_operator()
    spectrum, _ = _first_mode(operator)
    modes = mode_ensemble(spectrum, [1, 3])
    assert len(modes) == 2
    assert not np.any(modes[0].v)
    first = random_ensemble(spectrum, 4, seed=7, modes=3)
    second = random_ensemble(spectrum, 4, seed=7, modes=3)
    assert len(first) == 4
    assert all(np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v) for a, b in zip(first, second))


def test_wave_packet_moves_one_way():
    operator = _build_operator(64)
    packet = wave_packet(operator, (0.25,), (1.0,), 20.0, 0.05)
    assert packet.u.shape == (operator.dof,)
    with pytest.raises(ArgumentError):
        wave_packet(operator, (0.25,), (1.0,), 20.0, 0.0)


def test_uc_check_reports_constants():
    operator = _build_operator()
    spectrum, _ = _first_mode(operator)
    ensemble = mode_ensemble(spectrum, [1, 2, 3])
    report = quant_uc_check(ensemble, ControlProblem(LEFT, 2.0), operator, [1.0, 5.0], 0.5, operator)
    assert report.feasible
    assert not report.below_threshold
    assert len(list(report.rows())) == 2
    assert np.all(report.constants > 0)
    short = quant_uc_check(ensemble, ControlProblem(LEFT, 0.2), operator, [1.0], 0.5, operator)
    assert short.below_threshold


def test_uc_check_rejects_bad_parameters():
    operator = _build_operator()
    spectrum, _ = _first_mode(operator)
    with pytest.raises(ArgumentError):
        quant_uc_check([], ControlProblem(LEFT, 1.0), operator, [1.0], 0.5, operator)
    with pytest.raises(ArgumentError):
        quant_uc_check(mode_ensemble(spectrum, [1]), ControlProblem(LEFT, 1.0), operator, [0.0], 0.5, operator)


def test_threshold_probe_returns_both_horizons():
    operator = _build_operator(64)
    packet = wave_packet(operator, (0.8,), (1.0,), 30.0, 0.03)
    probe = threshold_probe(packet, ControlProblem(LEFT, 1.0), operator, operator)
    assert probe.short_T < probe.long_T
    assert probe.short_ratio >= 0.0
    assert probe.long_ratio > probe.short_ratio


def test_log_modulus():
    values = log_modulus(np.array([0.0, 1.0 / (math.e - 1.0)]))
    assert values[0] == 0.0
    assert values[1] == pytest.approx(1.0)


def test_stability_check():
    operator = _build_operator()
    spectrum, _ = _first_mode(operator)
    ensemble = random_ensemble(spectrum, 3, seed=1, modes=3)
    report = stability_check(ensemble, ControlProblem(LEFT, 2.0), operator, operator)
    assert math.isfinite(report.exponential_constant)
    assert math.isfinite(report.log_constant)
    assert report.unobserved == []
    assert len(report.rows) == 3


def test_semiglobal_check():
    operator = _build_operator()
    spectrum, _ = _first_mode(operator)
    ensemble = mode_ensemble(spectrum, [1, 2])
    report = semiglobal_check(ensemble, ControlProblem(LEFT, 1.0), operator, [1.0, 2.0], 0.5, 0.25)
    assert len(report.members) == 2
    assert np.all(np.isfinite(report.constants))
    with pytest.raises(ArgumentError):
        semiglobal_check(ensemble, ControlProblem(LEFT, 1.0), operator, [1.0], 0.5, 2.0)


def test_adjoint_matches_forward():
    operator = _build_operator()
    assert adjoint_check(operator, ControlProblem(LEFT, 1.0)) < 1e-8


def test_gradient_matches_finite_differences():
    operator = _build_operator()
    _, state = _first_mode(operator)
    assert gradient_check(state, operator, ControlProblem(LEFT, 1.0)) < 1e-5


def test_controls_need_interior_region():
    operator = _build_operator()
    with pytest.raises(ArgumentError):
        HumSystem(operator, ControlProblem(BoundaryRegion("x_lo"), 1.0))


def test_zero_data_needs_no_control():
    operator = _build_operator()
    zero = WaveState(np.zeros(operator.dof), np.zeros(operator.dof))
    result = hum_control(zero, ControlProblem(LEFT, 1.0), operator)
    assert result.cost == 0.0
    assert result.achieved
    assert not np.any(result.control)


def test_hum_reaches_target():
    operator = _build_operator()
    _, state = _first_mode(operator)
    result = hum_control(state, ControlProblem(LEFT, 2.0, eps_ctl=0.5), operator)
    assert result.ratio <= 0.5
    assert result.cost > 0.0
    assert result.achieved
    assert result.control.shape == (result.steps + 1, 4)


def test_fixed_penalty_reports_partial_result():
    operator = _build_operator()
    _, state = _first_mode(operator)
    problem = ControlProblem(LEFT, 2.0, eps_ctl=0.01, hum=HumSettings(penalty=1e2))
    with pytest.raises(PartialResultError) as info:
        hum_control(state, problem, operator)
    assert info.value.best.ratio > 0.01


def test_cost_curve_is_monotone():
    operator = _build_operator()
    _, state = _first_mode(operator)
    curve = cost_curve(state, ControlProblem(LEFT, 2.0), [0.5, 0.2, 0.1], operator)
    assert [row.eps for row in curve.rows] == [0.5, 0.2, 0.1]
    assert all(row.achieved for row in curve.rows)
    costs = [row.cost for row in curve.rows]
    assert all(a <= b for a, b in zip(costs, costs[1:]))
    assert math.isfinite(curve.slope)


def test_cost_curve_needs_decreasing_targets():
    operator = _build_operator()
    _, state = _first_mode(operator)
    with pytest.raises(ArgumentError):
        cost_curve(state, ControlProblem(LEFT, 2.0), [0.1, 0.2], operator)


def test_plane_wave_normal_incidence():
    split = plane_wave_coefficients(1.0, 4.0, 0.0)
    assert split.transmitted_energy == pytest.approx(8.0 / 9.0)
    assert split.reflected_energy == pytest.approx(1.0 / 9.0)
    assert split.critical_angle == pytest.approx(math.pi / 6.0)


def test_plane_wave_beyond_critical_angle_is_trapped():
    split = plane_wave_coefficients(1.0, 4.0, 0.6)
    assert split.transmitted_energy == 0.0
    assert split.transmitted_angle is None
    with pytest.raises(ArgumentError):
        plane_wave_coefficients(1.0, 4.0, math.pi / 2.0)


def _build_trapping_operator(cells=512, extent=4.0):
    medium = MediumSpec(
        Domain.rectangle((0.0, extent), (0.0, extent)),
        InterfaceSpec.vertical(1.5, (0.0, extent)),
        PiecewiseCoefficient.constant(1.0, 4.0),
    ).validate()
    return assemble(medium, Grid.from_cells(((0.0, extent), (0.0, extent)), (cells, cells)))


def test_trapping_needs_two_dimensions():
    with pytest.raises(GeometryError):
        trapping_demo(_build_operator(), 0.0, 10.0, width=0.05)


def test_trapping_rejects_a_packet_wider_than_the_strip():
    with pytest.raises(GeometryError):
        trapping_demo(_build_trapping_operator(cells=64), 0.0, 10.0, width=0.5)


def test_trapping_guard_catches_a_short_domain():
    # 2 units across: the transmitted packet runs into x = 2 long before the horizon
    medium = MediumSpec(
        Domain.rectangle((0.0, 2.0), (0.0, 2.0)),
        InterfaceSpec.vertical(1.5, (0.0, 2.0)),
        PiecewiseCoefficient.constant(1.0, 4.0),
    ).validate()
    operator = assemble(medium, Grid.from_cells(((0.0, 2.0), (0.0, 2.0)), (64, 64)))
    with pytest.raises(GeometryError):
        trapping_demo(operator, 0.0, 10.0, width=0.12)


@pytest.mark.slow
def test_trapping_normal_incidence_matches_plane_wave_split():
    report = trapping_demo(_build_trapping_operator(), 0.0, 60.0, width=0.12)
    assert report.transmitted == pytest.approx(8.0 / 9.0, rel=1e-2)
    assert report.reflected == pytest.approx(1.0 / 9.0, abs=1e-2)
    assert report.closure <= 1e-3
    assert report.band <= 1e-3


@pytest.mark.slow
def test_trapping_beyond_critical_angle_keeps_energy_in_the_slow_side():
    report = trapping_demo(_build_trapping_operator(), math.radians(45.0), 60.0, width=0.12)
    assert report.analytic.transmitted_energy == 0.0
    assert report.transmitted <= 1e-2
    assert report.reflected >= 0.98
    assert report.closure <= 1e-3
