import numpy as np
import pytest
from numpy.testing import assert_allclose

from controllability.error_handler import DimensionError, InvalidInputError
from controllability.spectral_state import ModeVector, SpatialGrid, lp_norm_values, modes_to_values, values_to_modes
from controllability.steering import (
    ControlOperator,
    ControlVector,
    GramianMatrix,
    control_bound,
    cost_functional,
    embedding_constant,
    gramian,
    gramian_by_factorization,
    resolvent_decay,
    resolvent_solve,
    unique_continuation_check,
)
from controllability.mild_solver import steering_iteration

from conftest import PSI_33


@pytest.fixture
def psi(unit_coefficient):
    return gramian(1.0, unit_coefficient, 8)


def test_gramian_closed_form_entries(psi):
    assert psi.matrix[0, 0] == pytest.approx(2.0 * (1.0 - np.exp(-2.0)), rel=1e-12)
    assert psi.matrix[0, 1] == pytest.approx(2.0 * (1.0 - np.exp(-5.0)) / 5.0, rel=1e-12)
    assert psi.matrix[1, 1] == pytest.approx(-np.expm1(-8.0) / 8.0, rel=1e-12)
    assert psi.matrix[2, 2] == pytest.approx(0.0555556, abs=5e-8)
    for n in range(3, 9):
        assert psi.matrix[n - 1, n - 1] == pytest.approx(-np.expm1(-2.0 * n * n) / (2.0 * n * n), rel=1e-12)
    assert psi.matrix[0, 2] == 0.0
    assert psi.matrix[2, 2] == pytest.approx(PSI_33, rel=1e-12)


def test_gramian_matches_factorization(unit_coefficient):
    exact = gramian(1.0, unit_coefficient, 6)
    factored = gramian_by_factorization(1.0, unit_coefficient, 6)
    assert_allclose(factored.matrix, exact.matrix, rtol=1e-8, atol=1e-12)


def test_gramian_is_symmetric_positive_semidefinite(psi):
    assert psi.asymmetry() <= 1e-12
    assert psi.min_eigenvalue() >= -1e-12
    rows = psi.rows()
    assert len(rows) == 64
    assert rows[1] == {'m': 1, 'n': 2, 'value': pytest.approx(psi.matrix[0, 1], rel=1e-15)}


def test_control_operator_adjointness(rng):
    op = ControlOperator(6)
    for _ in range(50):
        u = ControlVector(rng.normal(size=5))
        xs = ModeVector(rng.normal(size=6))
        assert op.apply_B(u).coeffs @ xs.coeffs == pytest.approx(u.coeffs @ op.apply_B_star(xs).coeffs, abs=1e-12)
    assert op.norm_bound == pytest.approx(np.sqrt(5.0))
    assert_allclose(op.apply_B(ControlVector.unit(2, 6)).coeffs, [2.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    with pytest.raises(DimensionError):
        op.apply_B(ControlVector(np.ones(3)))
    with pytest.raises(InvalidInputError):
        ControlOperator(1)


@pytest.mark.parametrize('p', [2.0, 3.0])
def test_resolvent_never_enlarges_the_data(psi, rng, p):
    grid = SpatialGrid(33, p)
    h = ModeVector(rng.normal(size=8) / np.arange(1, 9))
    norm_h = float(lp_norm_values(modes_to_values(h.coeffs, grid), grid.weights, p))
    rows = resolvent_decay(np.logspace(-5, 3, 9), psi, h, grid)
    for row in rows:
        assert row['norm'] <= norm_h * (1.0 + 1e-9)
        assert row['residual'] <= 1e-9
    norms = [row['norm'] for row in rows]
    assert norms[0] < norms[-1]


def test_newton_agrees_with_direct_solve_in_hilbert_space(psi, rng):
    grid = SpatialGrid(33, 2.0)
    h = ModeVector(rng.normal(size=8))
    direct = resolvent_solve(0.1, psi, h, grid, method='direct')
    newton = resolvent_solve(0.1, psi, h, grid, method='newton', initial='data', tolerance=1e-13)
    assert direct.method == 'direct'
    assert newton.method == 'newton'
    assert newton.iterations >= 1
    assert_allclose(newton.z.coeffs, direct.z.coeffs, atol=1e-10)


def test_resolvent_of_e3_is_the_scalar_factor(psi):
    grid = SpatialGrid(33, 2.0)
    solution = resolvent_solve(0.1, psi, ModeVector.unit(3, 8), grid)
    assert solution.z.coeffs[2] == pytest.approx(0.1 / (0.1 + PSI_33), rel=1e-12)
    assert_allclose(np.delete(solution.z.coeffs, 2), 0.0, atol=1e-15)


def test_resolvent_rejects_bad_input(psi):
    grid = SpatialGrid(33, 3.0)
    h = ModeVector.unit(1, 8)
    with pytest.raises(InvalidInputError):
        resolvent_solve(0.1, psi, h, grid, method='direct')
    with pytest.raises(InvalidInputError):
        resolvent_solve(0.0, psi, h, grid)
    with pytest.raises(DimensionError):
        resolvent_solve(0.1, psi, ModeVector.unit(1, 4), grid)


def test_zero_gramian_returns_the_data(psi, rng):
    grid = SpatialGrid(33, 3.0)
    h = ModeVector(rng.normal(size=8))
    zero = GramianMatrix(np.zeros((8, 8)), 1.0, psi.coefficient)
    assert_allclose(resolvent_solve(0.3, zero, h, grid).z.coeffs, h.coeffs, atol=1e-14)


def test_unique_continuation(unit_coefficient):
    report = unique_continuation_check(1.0, unit_coefficient, 8, 64)
    assert report['is_valid'], report
    assert report['smallest_singular_value'] > 1e-10
    dead = unique_continuation_check(1.0, unit_coefficient, 8, 64, ControlOperator(8, gain=0.0))
    assert not dead['is_valid']
    assert dead['errors']
    with pytest.raises(InvalidInputError):
        unique_continuation_check(1.0, unit_coefficient, 8, 4)


def test_cost_functional():
    assert cost_functional(0.5, 2.0, 0.1) == pytest.approx(0.45)


def test_linear_control_law(linear_problem):
    x, control, report = steering_iteration(0.1, linear_problem)
    assert report.converged
    assert report.iterations == 2
    expected = 6.428571 * np.exp(-9.0 * (1.0 - control.times))
    assert_allclose(control.coeffs[:, 1], expected, rtol=1e-6)
    assert_allclose(np.delete(control.coeffs, 1, axis=1), 0.0, atol=1e-12)
    assert report.control_l2 ** 2 == pytest.approx(control.dual[2] ** 2 * PSI_33, rel=1e-10)
    bound = control_bound(0.1, control, linear_problem.data_size(), linear_problem.context.control, linear_problem.grid)
    assert bound['holds']
    assert bound['M_B'] == pytest.approx(np.sqrt(5.0))


def test_embedding_constant_depends_on_modes_not_points(rng):
    coarse, fine = SpatialGrid(129, 3.0), SpatialGrid(1025, 3.0)
    expected = (16.0 / np.pi) ** (1.0 / 6.0)
    assert embedding_constant(coarse, 8) == pytest.approx(expected, rel=1e-14)
    assert embedding_constant(fine, 8) == pytest.approx(expected, rel=1e-14)
    assert embedding_constant(fine, 8) < embedding_constant(fine)
    assert embedding_constant(SpatialGrid(129, 1.5), 8) == pytest.approx(np.pi ** (1.0 / 6.0), rel=1e-14)
    q = fine.q
    for _ in range(200):
        v = rng.standard_t(1.5, size=fine.points)
        v[rng.integers(fine.points)] += 50.0
        projected = np.linalg.norm(values_to_modes(v, fine, 8))
        assert projected <= embedding_constant(fine, 8) * float(lp_norm_values(v, fine.weights, q)) * (1 + 1e-12)
