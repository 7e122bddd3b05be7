import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from controllability.error_handler import DimensionError, InvalidInputError, ResolutionError
from controllability.spectral_state import (
    ModeVector,
    SpatialGrid,
    StateVector,
    check_resolution,
    dual_norm,
    duality_jacobian,
    duality_map,
    duality_values,
    eigenfunction,
    from_modes,
    lp_norm,
    modes_to_values,
    pairing,
    to_modes,
    values_to_modes,
)


def test_grid_weights_integrate_constants_exactly(grid):
    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == pytest.approx(np.pi)
    assert np.sum(grid.weights) == pytest.approx(np.pi, rel=1e-14)


def test_norm_of_one_is_sqrt_pi(grid):
    one = StateVector(np.ones(grid.points), grid)
    assert lp_norm(one) == pytest.approx(np.sqrt(np.pi), rel=1e-14)


def test_duality_of_one_in_l4():
    grid = SpatialGrid(65, 4.0)
    one = StateVector(np.ones(grid.points), grid)
    J = duality_map(one)
    assert_allclose(J.values, 0.5641896, rtol=1e-7)
    assert J.q == pytest.approx(4.0 / 3.0)


def test_duality_is_identity_for_p2(grid, rng):
    x = StateVector(rng.normal(size=grid.points), grid)
    assert_array_equal(duality_map(x).values, x.values)


@pytest.mark.parametrize('p', [1.5, 2.0, 3.0, 4.0])
def test_duality_pairing_and_norm_identities(p, rng):
    grid = SpatialGrid(65, p)
    for _ in range(200):
        x = StateVector(rng.normal(size=grid.points) * rng.uniform(0.1, 10.0), grid)
        J = duality_map(x)
        norm = lp_norm(x)
        assert pairing(x, J) == pytest.approx(norm ** 2, rel=1e-9)
        assert dual_norm(J) == pytest.approx(norm, rel=1e-9)


def test_duality_of_zero_is_zero():
    grid = SpatialGrid(33, 1.5)
    assert not np.any(duality_values(np.zeros(grid.points), grid.weights, grid.p))


def test_duality_is_positively_homogeneous(rng):
    grid = SpatialGrid(33, 3.0)
    x = rng.normal(size=grid.points)
    assert_allclose(duality_values(2.5 * x, grid.weights, 3.0), 2.5 * duality_values(x, grid.weights, 3.0), rtol=1e-12)


def test_duality_rows_match_single_states(rng):
    grid = SpatialGrid(33, 3.0)
    rows = rng.normal(size=(4, grid.points))
    stacked = duality_values(rows, grid.weights, grid.p)
    for row, expected in zip(rows, stacked):
        assert_allclose(duality_values(row, grid.weights, grid.p), expected, rtol=1e-14)


def test_duality_jacobian_matches_finite_differences(rng):
    grid = SpatialGrid(33, 3.0)
    x = rng.normal(size=grid.points)
    direction = rng.normal(size=grid.points)
    eps = 1e-6
    numeric = (duality_values(x + eps * direction, grid.weights, 3.0)
               - duality_values(x - eps * direction, grid.weights, 3.0)) / (2 * eps)
    analytic = duality_jacobian(x, grid.weights, 3.0) @ direction
    assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


def test_sine_transform_round_trip(grid, rng):
    modes = grid.points // 2
    c = ModeVector(rng.normal(size=modes))
    assert_allclose(to_modes(from_modes(c, grid), modes).coeffs, c.coeffs, atol=1e-12)


def test_row_transforms_agree_with_single_transforms(grid, rng):
    coeffs = rng.normal(size=(3, 8))
    values = modes_to_values(coeffs, grid)
    for row, c in zip(values, coeffs):
        assert_allclose(row, from_modes(ModeVector(c), grid).values, atol=1e-14)
    assert_allclose(values_to_modes(values, grid, 8), coeffs, atol=1e-12)


def test_eigenfunctions_are_normalized(grid):
    for n in (1, 3, 7):
        w = eigenfunction(n, grid)
        assert lp_norm(w) == pytest.approx(1.0, rel=1e-12)
        assert w.values[0] == 0.0 and w.values[-1] == 0.0


def test_resolution_limit():
    check_resolution(16, 32)
    with pytest.raises(ResolutionError):
        check_resolution(17, 32)
    with pytest.raises(ResolutionError):
        SpatialGrid(33).basis(17)


@pytest.mark.parametrize('p', [1.0, 0.5, np.inf])
def test_exponent_outside_range_is_rejected(p):
    with pytest.raises(InvalidInputError):
        SpatialGrid(33, p)


def test_non_finite_state_is_rejected(grid):
    values = np.zeros(grid.points)
    values[3] = np.nan
    with pytest.raises(InvalidInputError):
        StateVector(values, grid)


def test_grid_mismatch_is_rejected(grid):
    other = SpatialGrid(33)
    with pytest.raises(DimensionError):
        StateVector.zeros(grid) + StateVector.zeros(other)
    with pytest.raises(DimensionError):
        StateVector(np.zeros(10), grid)


def test_state_arithmetic(grid):
    x = StateVector.from_function(np.sin, grid)
    y = 2.0 * x - x
    assert_allclose(y.values, x.values)
    assert y.p == 2.0
