import math

import numpy as np
import pytest

from core.carleman import (
    CarlemanWeight,
    LocalChart,
    MicrolocalPoint,
    SidedSamples,
    carleman_certify,
    carleman_sides,
    check_convexification,
    check_gamma_cover,
    check_subellipticity,
    classify,
    classify_grid,
    compute_m,
    factors,
    geometric_alpha_ratio,
    homogeneous_transmission_bump,
    m_grid,
    phi,
    phi_prime,
    random_bump_family,
    subellipticity_margin,
    transmission_residuals,
)
from core.errors import AmbiguityError, ArgumentError, ConfigurationError, GeometryError, RegionError
from core.grid import Grid
from core.medium import Domain, InterfaceSpec, MediumSpec, PiecewiseCoefficient, Side


def _build_square(c_minus=1.0, c_plus=4.0):
    return MediumSpec(
        Domain.rectangle((0.0, 1.0), (0.0, 1.0)),
        InterfaceSpec.vertical(0.5, (0.0, 1.0)),
        PiecewiseCoefficient.constant(c_minus, c_plus),
    ).validate()


def _build_line(c_minus=1.0, c_plus=4.0):
    return MediumSpec(
        Domain.interval(0.0, 1.0),
        InterfaceSpec.point(0.5),
        PiecewiseCoefficient.constant(c_minus, c_plus),
    ).validate()


def _weight(alpha_minus=1.0, alpha_plus=5.0, beta=1.0, **kwargs):
    return CarlemanWeight(alpha_minus, alpha_plus, beta, **kwargs)


def test_weight_validation():
    with pytest.raises(ConfigurationError):
        CarlemanWeight(2.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        CarlemanWeight(1.0, 2.0, 0.0)
    with pytest.raises(ConfigurationError):
        CarlemanWeight(1.0, 2.0, 1.0, center=(0.0,))


def test_branch_polynomials():
    weight = _weight(1.0, 3.0, 2.0)
    assert phi(0.1, Side.AUTO, weight) == pytest.approx(0.3 + 0.01)
    assert phi(-0.1, Side.AUTO, weight) == pytest.approx(-0.1 + 0.01)
    assert phi_prime(0.0, Side.MINUS, weight) == 1.0
    assert phi_prime(0.0, Side.PLUS, weight) == 3.0
    assert phi_prime(0.25, Side.AUTO, weight) == pytest.approx(3.5)


def test_weight_derivative_on_interface_needs_side():
    with pytest.raises(AmbiguityError):
        phi_prime(0.0, Side.AUTO, _weight())


def test_classify_grid_matches_inequalities():
    medium = _build_square()
    grid_p, grid_t = np.meshgrid(np.linspace(-3.0, 3.0, 13), np.linspace(-3.0, 3.0, 13) + 0.1)
    xi_p, xi_t = grid_p.ravel(), grid_t.ravel()
    eps = 0.2
    flags = classify_grid(medium, (0.5, 0.5), xi_p, xi_t, eps)
    norm2 = xi_p**2 + xi_t**2
    assert np.array_equal(flags["elliptic_minus"], xi_p**2 - xi_t**2 >= eps * norm2)
    assert np.array_equal(flags["elliptic_plus"], xi_p**2 - xi_t**2 / 4.0 >= eps * norm2)
    assert np.array_equal(flags["glancing_plus"], xi_p**2 - xi_t**2 / 4.0 <= 2 * eps * norm2)


def test_classify_grid_matches_inequalities_on_random_points():
    rng = np.random.default_rng(7)
    xi_p, xi_t = rng.uniform(-5.0, 5.0, size=(2, 100_000))
    eps = 0.1
    flags = classify_grid(_build_square(), (0.5, 0.5), xi_p, xi_t, eps)
    norm2 = xi_p**2 + xi_t**2
    for side, c in (("minus", 1.0), ("plus", 4.0)):
        symbol = xi_p**2 - xi_t**2 / c
        assert np.array_equal(flags[f"elliptic_{side}"], symbol >= eps * norm2)
        assert np.array_equal(flags[f"glancing_{side}"], symbol <= 2 * eps * norm2)
        assert np.all(flags[f"elliptic_{side}"] | flags[f"glancing_{side}"])


def test_classify_rejects_zero_frequency():
    with pytest.raises(ArgumentError):
        classify_grid(_build_square(), (0.5, 0.5), [0.0], [0.0], 0.1)


def test_point_in_plus_region_only():
    point = MicrolocalPoint((0.5, 0.5), (1.0,), 1.2)
    tags = classify(point, _build_square(), 0.1)
    assert tags.labels() == ("elliptic_plus", "glancing_minus")
    m_minus, m_plus = compute_m(point, _build_square(), 0.1)
    assert m_minus is None
    assert m_plus == pytest.approx(0.8)


def test_factor_symbols():
    point = MicrolocalPoint((0.5, 0.5), (1.0,), 0.5, tau=2.0)
    weight = _weight(1.0, 3.0, 1.0, center=(0.0, 0.5, 0.5))
    symbols = factors(point, weight, _build_square(), 0.1)
    assert symbols.e_plus - symbols.f_plus == pytest.approx(2.0 * symbols.m_plus)
    assert symbols.f_minus == pytest.approx(2.0 * 1.0 - symbols.m_minus)


def test_m_is_first_order_homogeneous():
    medium = _build_square()
    xi_p = np.array([1.0, 2.0, 3.0])
    xi_t = np.array([0.5, 0.3, 2.0])
    m_minus, m_plus = m_grid(medium, (0.5, 0.5), xi_p, xi_t, 0.1)
    m_minus2, m_plus2 = m_grid(medium, (0.5, 0.5), 2.0 * xi_p, 2.0 * xi_t, 0.1)
    assert np.allclose(m_plus2, 2.0 * m_plus)
    assert np.array_equal(np.isnan(m_minus2), np.isnan(m_minus))
    finite = np.isfinite(m_minus)
    assert np.allclose(m_minus2[finite], 2.0 * m_minus[finite])


def test_geometric_ratio_for_constant_jump():
    value = geometric_alpha_ratio(_build_square(), 0.1)
    assert value == pytest.approx(math.sqrt(4.375), rel=1e-3)


def test_geometric_ratio_needs_two_dimensions():
    with pytest.raises(RegionError):
        geometric_alpha_ratio(_build_line(), 0.1)


def test_cover_holds_for_large_weight_ratio():
    report = check_gamma_cover(
        _weight(1.0, 5.0, 1.0), _build_square(), 0.1, 1.2, 1.5, 0.05, taus=[1.0, 10.0, 100.0]
    )
    assert report.holds
    assert 0.0 < report.overlap < 1.0
    assert report.constant > 0
    assert report.tau0 == 1.0
    assert report.witness is None
    assert len(report.rows) == 3


def test_cover_fails_below_geometric_ratio():
    report = check_gamma_cover(
        _weight(1.0, 1.88, 1.0), _build_square(), 0.1, 1.2, 1.5, 0.05, taus=[1.0, 10.0, 100.0]
    )
    assert not report.holds
    assert report.tau0 is None
    assert report.witness is not None
    assert report.witness["condition"] == "f_minus"


def test_cover_needs_ordered_parameters():
    with pytest.raises(ArgumentError):
        check_gamma_cover(_weight(), _build_square(), 0.1, 1.5, 1.2, 0.05)


def test_subellipticity_margin_is_linear_in_beta_on_the_characteristic_set():
    medium = _build_square()
    x = (0.5, 0.5)
    values = []
    for beta in (1.0, 2.0):
        weight = CarlemanWeight(0.5, 1.0, beta, center=(0.0, 0.5, 0.5))
        values.append(float(subellipticity_margin(weight, medium, x, [1.0], [0.0], 1.0, 1.2)[0]))
    assert values[0] == pytest.approx(0.5)
    assert values[1] == pytest.approx(1.0)


def test_subellipticity_positive_for_constant_sides():
    report = check_subellipticity(_weight(), _build_square(), 0.1, 1.2, 0.05, taus=[1.0, 10.0])
    assert report.margin > 0
    assert report.checked > 0
    with pytest.raises(RegionError):
        check_subellipticity(_weight(), _build_line(), 0.1, 1.2, 0.05)


def test_convexification_defaults():
    weight = _weight(convexification=1.0)
    report = check_convexification(weight, 0.1)
    assert report.delta == pytest.approx(1.0 * 0.01 / 40.0)
    assert report.rho == pytest.approx(report.delta / 10.0)
    assert report.samples > 0
    with pytest.raises(ArgumentError):
        check_convexification(_weight(), 0.1)


def _bump_samples(cells, *, offset=1.0 / 3.0):
    medium = _build_line()
    grid = Grid.from_cells(((0.0, 1.0),), (cells,))
    times = np.linspace(0.0, 1.0, 33)
    return medium, homogeneous_transmission_bump(medium, grid, times, (0.5, 0.5), 0.3, offset=offset)


def test_local_chart_needs_two_layers():
    medium = _build_line()
    with pytest.raises(GeometryError):
        LocalChart.from_medium(medium, Grid.from_cells(((0.0, 1.0),), (3,)))
    chart = LocalChart.from_medium(medium, Grid.from_cells(((0.0, 1.0),), (8,)))
    assert chart.interface_index == 4
    assert np.array_equal(chart.side_weights(-1), [1, 1, 1, 1, 0.5, 0, 0, 0, 0])


def test_bump_satisfies_transmission_conditions():
    medium, coarse = _bump_samples(64)
    _, fine = _bump_samples(128)
    coarse_data = transmission_residuals(coarse, medium)
    fine_data = transmission_residuals(fine, medium)
    assert not np.any(coarse_data.trace_jump)
    assert np.max(np.abs(fine_data.flux_jump)) < np.max(np.abs(coarse_data.flux_jump))


def test_sided_samples_validation():
    grid = Grid.from_cells(((0.0, 1.0),), (8,))
    with pytest.raises(ArgumentError):
        SidedSamples(np.linspace(0, 1, 2), grid, np.zeros((2, 9)), np.zeros((2, 9)))
    with pytest.raises(ArgumentError):
        SidedSamples(np.linspace(0, 1, 4), grid, np.zeros((4, 8)), np.zeros((4, 9)))


def test_carleman_sides_are_quadratic():
    medium, samples = _bump_samples(32)
    weight = _weight(1.0, 2.0, 1.0, center=(0.5, 0.5))
    lhs, rhs = carleman_sides(samples, None, weight, 2.0, 0.1, medium)
    lhs3, rhs3 = carleman_sides(samples.scaled(3.0), None, weight, 2.0, 0.1, medium)
    assert lhs.total > 0
    assert rhs.total > 0
    assert lhs3.total == pytest.approx(9.0 * lhs.total, rel=1e-9)
    assert rhs3.total == pytest.approx(9.0 * rhs.total, rel=1e-9)
    assert set(rhs.terms) == {"l2", "gradient_minus", "gradient_plus"}


def test_carleman_sides_need_tau_at_least_one():
    medium, samples = _bump_samples(32)
    with pytest.raises(ArgumentError):
        carleman_sides(samples, None, _weight(center=(0.5, 0.5)), 0.5, 0.1, medium)


def test_certification_over_a_small_family():
    medium = _build_line()
    grid = Grid.from_cells(((0.0, 1.0),), (32,))
    times = np.linspace(0.0, 1.0, 33)
    family = random_bump_family(medium, grid, times, (0.5, 0.5), 0.3, 3, seed=1)
    assert len(family) == 3
    report = carleman_certify(family, _weight(1.0, 2.0, 1.0, center=(0.5, 0.5)), 0.1, [1.0, 2.0], medium, r0=0.75)
    assert [tau for tau, _ in report.rows] == [1.0, 2.0]
    assert not report.degenerate
    assert math.isfinite(report.sup_constant) and report.sup_constant > 0


def test_certification_rejects_members_outside_the_support_ball():
    medium = _build_line()
    grid = Grid.from_cells(((0.0, 1.0),), (32,))
    times = np.linspace(0.0, 1.0, 33)
    family = random_bump_family(medium, grid, times, (0.5, 0.5), 0.3, 2, seed=1)
    weight = _weight(1.0, 2.0, 1.0, center=(0.5, 0.5))
    with pytest.raises(ArgumentError):
        carleman_certify(family, weight, 0.1, [1.0], medium, r0=0.1)
    with pytest.raises(ArgumentError):
        carleman_certify(family, weight, 0.1, [1.0], medium, r0=0.0)


def test_cover_overlap_grows_with_the_gap_between_mu_and_mu0():
    weight = _weight(1.0, 5.0, 1.0)
    narrow = check_gamma_cover(weight, _build_square(), 0.1, 1.2, 1.3, 0.05, taus=[1.0, 10.0])
    wide = check_gamma_cover(weight, _build_square(), 0.1, 1.2, 1.8, 0.05, taus=[1.0, 10.0])
    assert narrow.checked == wide.checked
    assert 0.0 < narrow.overlap < wide.overlap
