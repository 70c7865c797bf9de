import numpy as np
import pytest

from core.cache import SpectrumCache
from core.elliptic import (
    apply_inverse,
    assemble,
    eigendecompose,
    energy_pair_norms,
    norm_Hs,
    sobolev_norm,
    typical_frequency,
)
from core.errors import ArgumentError, GeometryError, SpectrumTruncatedWarning
from core.grid import Grid
from core.medium import Domain, InterfaceSpec, MediumSpec, PiecewiseCoefficient
from core.metrics import init_metrics


def _build_line(c_minus=1.0, c_plus=4.0):
    return MediumSpec(
        Domain.interval(0.0, 1.0),
        InterfaceSpec.point(0.5),
        PiecewiseCoefficient.constant(c_minus, c_plus),
    ).validate()


def _build_square(c_minus=1.0, c_plus=4.0):
    return MediumSpec(
        Domain.rectangle((0.0, 1.0), (0.0, 1.0)),
        InterfaceSpec.vertical(0.5, (0.0, 1.0)),
        PiecewiseCoefficient.constant(c_minus, c_plus),
    ).validate()


def _line_operator(cells=8, c_minus=1.0, c_plus=4.0):
    return assemble(_build_line(c_minus, c_plus), Grid.from_cells(((0.0, 1.0),), (cells,)))


def test_face_coefficients_switch_at_interface():
    operator = _line_operator(8)
    assert np.allclose(operator.face_coefficients[0], [1, 1, 1, 1, 4, 4, 4, 4])
    assert operator.interface_index == 4
    assert operator.dof == 7


def test_operator_is_symmetric():
    operator = assemble(_build_square(), Grid.from_cells(((0.0, 1.0), (0.0, 1.0)), (8, 6)))
    dense = operator.matrix.toarray()
    assert np.allclose(dense, dense.T)
    assert np.all(np.linalg.eigvalsh(dense) > 0)


def test_misaligned_interface_is_rejected():
    with pytest.raises(GeometryError):
        _line_operator(7)


def test_constant_coefficient_eigenvalues():
    cells = 16
    h = 1.0 / cells
    operator = _line_operator(cells, 1.0, 1.0)
    spectrum = eigendecompose(operator, 5)
    k = np.arange(1, 6)
    expected = 4.0 / h**2 * np.sin(k * np.pi * h / 2.0) ** 2
    assert np.allclose(spectrum.eigenvalues, expected, rtol=1e-10)


def test_eigenvectors_are_weighted_orthonormal():
    spectrum = eigendecompose(_line_operator(16), 6)
    assert np.allclose(spectrum.gram(), np.eye(6), atol=1e-10)


def test_eigendecompose_rejects_bad_k():
    with pytest.raises(ArgumentError):
        eigendecompose(_line_operator(8), 0)
    with pytest.raises(ArgumentError):
        eigendecompose(_line_operator(8), 8)


def test_lanczos_path_matches_dense():
    operator = _line_operator(32)
    dense = eigendecompose(operator, 4)
    lanczos = eigendecompose(operator, 4, dense_limit=8)
    assert np.allclose(dense.eigenvalues, lanczos.eigenvalues, rtol=1e-8)


def test_spectral_norms_match_operator_norms():
    operator = _line_operator(16)
    spectrum = eigendecompose(operator, operator.dof)
    rng = np.random.default_rng(3)
    u = rng.standard_normal(operator.dof)
    for s in (-1, 0, 1):
        assert norm_Hs(u, s, spectrum) == pytest.approx(sobolev_norm(u, s, operator), rel=1e-8)


def test_typical_frequency_of_a_mode():
    operator = _line_operator(16)
    spectrum = eigendecompose(operator, 4)
    u0 = spectrum.mode(3)
    u1 = np.zeros_like(u0)
    assert typical_frequency(u0, u1, spectrum) == pytest.approx(np.sqrt(spectrum.eigenvalues[2]), rel=1e-8)
    high, low = energy_pair_norms(u0, u1, operator)
    assert high / low == pytest.approx(np.sqrt(spectrum.eigenvalues[2]), rel=1e-6)


def test_typical_frequency_of_zero_data():
    operator = _line_operator(8)
    zero = np.zeros(operator.dof)
    with pytest.raises(ArgumentError):
        typical_frequency(zero, zero, operator)


def test_truncated_spectrum_warns():
    operator = _line_operator(16)
    full = eigendecompose(operator, operator.dof)
    truncated = eigendecompose(operator, 3)
    with pytest.warns(SpectrumTruncatedWarning):
        truncated.norm_hs(full.mode(6), 0)


def test_norm_exponent_is_checked():
    operator = _line_operator(8)
    with pytest.raises(ArgumentError):
        operator.norm_hs(np.ones(operator.dof), 2)


def test_apply_inverse_solves_system():
    operator = assemble(_build_square(), Grid.from_cells(((0.0, 1.0), (0.0, 1.0)), (10, 10)))
    rng = np.random.default_rng(0)
    f = rng.standard_normal(operator.dof)
    u = apply_inverse(operator, f, 1e-12)
    assert np.linalg.norm(operator.apply(u) - f) <= 1e-9 * np.linalg.norm(f)
    assert not np.any(apply_inverse(operator, np.zeros(operator.dof)))


def test_lambda_max_bounds_spectrum():
    operator = _line_operator(16)
    top = np.linalg.eigvalsh(operator.matrix.toarray())[-1]
    assert operator.lambda_max >= top


def test_spectrum_cache_hit(tmp_path):
    metrics = init_metrics()
    operator = _line_operator(16)
    cache = SpectrumCache(tmp_path / "cache")
    try:
        first = eigendecompose(operator, 4, cache=cache)
        second = eigendecompose(operator, 4, cache=cache)
    finally:
        cache.close()
    snapshot = metrics.snapshot()
    assert snapshot.cache_misses == 1
    assert snapshot.cache_hits == 1
    assert snapshot.eigensolves == 1
    assert np.array_equal(first.eigenvalues, second.eigenvalues)


def test_cache_key_depends_on_coefficients(tmp_path):
    cache = SpectrumCache(tmp_path / "cache")
    try:
        one = cache.build_key(_line_operator(8, 1.0, 4.0), 3, "dense")
        other = cache.build_key(_line_operator(8, 1.0, 2.0), 3, "dense")
    finally:
        cache.close()
    assert one != other


@pytest.mark.parametrize("dim", [1, 2])
def test_flux_matched_piecewise_linear_state_is_steady(dim):
    cells = 32
    c_minus, c_plus = 1.0, 4.0
    if dim == 1:
        operator = _line_operator(cells, c_minus, c_plus)
    else:
        operator = assemble(_build_square(c_minus, c_plus), Grid.from_cells(((0.0, 1.0), (0.0, 1.0)), (cells, cells)))
    x = operator.grid.points()[:, 0]
    # unit flux c u' on both sides, continuous at x = 0.5
    values = np.where(x <= 0.5, x / c_minus, 0.5 / c_minus + (x - 0.5) / c_plus)
    residual = operator.apply_full(values)
    h = 1.0 / cells
    assert h**2 * np.max(np.abs(residual)) <= 1e-13


def test_eigenvalues_decrease_with_the_fast_side_coefficient():
    previous = None
    for c_plus in (4.0, 3.0, 2.0, 1.5, 1.0):
        values = eigendecompose(_line_operator(32, 1.0, c_plus), 6).eigenvalues
        if previous is not None:
            assert np.all(values <= previous * (1.0 + 1e-12))
            assert values[0] < previous[0]
        previous = values


def test_full_spectrum_coefficients_keep_the_norm():
    operator = assemble(_build_square(), Grid.from_cells(((0.0, 1.0), (0.0, 1.0)), (8, 8)))
    spectrum = eigendecompose(operator, operator.dof)
    rng = np.random.default_rng(5)
    u = rng.standard_normal(operator.dof)
    assert np.sum(spectrum.coefficients(u) ** 2) == pytest.approx(operator.norm(u) ** 2, rel=1e-10)
    assert spectrum.tail_mass(u) <= 1e-10


def test_l2_norm_interpolates_between_h1_and_h_minus1():
    operator = _line_operator(32)
    rng = np.random.default_rng(8)
    for _ in range(5):
        u = rng.standard_normal(operator.dof)
        low, mid, high = (sobolev_norm(u, s, operator) for s in (-1, 0, 1))
        assert mid**2 <= low * high * (1.0 + 1e-9)


def test_typical_frequency_is_at_least_the_lowest_frequency():
    operator = _line_operator(32)
    spectrum = eigendecompose(operator, 1)
    rng = np.random.default_rng(9)
    floor = np.sqrt(spectrum.eigenvalues[0])
    for _ in range(5):
        u0, u1 = rng.standard_normal((2, operator.dof))
        assert typical_frequency(u0, u1, operator) >= floor * (1.0 - 1e-9)


def test_apply_inverse_of_the_first_mode():
    operator = _line_operator(32)
    spectrum = eigendecompose(operator, 1)
    mode = spectrum.mode(1)
    solved = apply_inverse(operator, mode, 1e-12)
    assert np.allclose(solved, mode / spectrum.eigenvalues[0], rtol=0.0, atol=1e-9 * np.max(np.abs(mode)))
