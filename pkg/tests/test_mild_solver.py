import numpy as np
import pytest
from numpy.testing import assert_allclose

from controllability.cli import build_problem
from controllability.error_handler import DimensionError, InvalidInputError
from controllability.evolution import EvolutionOperator, StepPropagators, TimeGrid
from controllability.inclusion import InclusionSpec, SelectionPath, SelectionPolicy
from controllability.mild_solver import (
    Impulse,
    ImpulseSchedule,
    free_trajectory,
    integrate_mild,
    mild_global_formula,
    pc_distance,
    steering_iteration,
)
from controllability.phase_space import build_history
from controllability.spectral_state import StateVector, lp_norm, modes_to_values
from controllability.validation_framework import get_validation_framework

from conftest import LINEAR_ERRORS, LINEAR_LAMBDAS, PSI_33, SHIPPED_IMPULSIVE, load_run_config

TRIVIAL = InclusionSpec('zero', delay=0.5)


def test_homogeneous_solution_decays_exactly(grid, unit_propagators):
    phi = build_history('mode', grid, nu=1.0, delay=0.5, window=1.0, mode=2, amplitude=0.8)
    x = integrate_mild(phi, None, TRIVIAL, SelectionPolicy(), None, unit_propagators)
    times = x.times
    assert_allclose(x.coeffs[:, 1], 0.8 * np.exp(-4.0 * times), atol=1e-10)
    assert_allclose(np.delete(x.coeffs, 1, axis=1), 0.0, atol=1e-12)


def test_step_halving_is_second_order(grid, unit_coefficient):
    evolution = EvolutionOperator(unit_coefficient, 1.0, 6)
    phi = build_history('mode', grid, nu=1.0, delay=0.5, window=1.0, mode=1)
    ratio = get_validation_framework().refinement_ratio(evolution, phi, TRIVIAL, SelectionPolicy(), steps=16)
    assert 3.5 <= ratio <= 4.5


def test_recursion_matches_global_formula(grid, unit_propagators):
    phi = build_history('mode', grid, nu=1.0, delay=0.5, window=1.0, mode=1)
    times = unit_propagators.time_grid.times
    forcing = np.outer(np.sin(3 * times), np.sin(grid.nodes)) + np.outer(np.cos(2 * times), np.sin(2 * grid.nodes))
    selection = SelectionPath(times, forcing, grid)
    x = integrate_mild(phi, None, TRIVIAL, SelectionPolicy(), None, unit_propagators, selection=selection)
    evolution = unit_propagators.evolution
    for t in (0.5, 1.0):
        node = int(round(t * 50))
        oracle = mild_global_formula(phi, None, selection.modes(8), x, None, evolution, None, t)
        assert_allclose(x.coeffs[node], oracle, rtol=1e-8, atol=1e-12)


def test_jumps_enter_the_global_formula(grid, unit_propagators):
    phi = build_history('constant', grid, nu=1.0, delay=0.5, window=1.0, value=0.3)
    impulses = ImpulseSchedule.on_grid([Impulse.separable(0.4, grid, scale=0.5)], unit_propagators.time_grid)
    x = integrate_mild(phi, None, TRIVIAL, SelectionPolicy(), impulses, unit_propagators)
    assert set(x.jumps) == {20}
    oracle = mild_global_formula(phi, None, None, x, impulses, unit_propagators.evolution, None, 1.0)
    assert_allclose(x.terminal, oracle, rtol=1e-10, atol=1e-13)


def test_impulse_bound_and_periodicity(grid, rng):
    impulse = Impulse.separable(0.5, grid, scale=0.7, response='constant')
    for _ in range(20):
        x = rng.normal(size=grid.points) * 4.0
        out = impulse.apply(StateVector(x, grid))
        assert lp_norm(out) <= impulse.bound * (1.0 + 1e-12)
        assert_allclose(impulse.apply_values(x + 2 * np.pi), out.values, atol=1e-12)


def test_impulse_kernel_must_match_the_grid(grid):
    with pytest.raises(DimensionError):
        Impulse(0.5, np.zeros((3, 3)), grid)


def test_pc_distance(grid, unit_propagators):
    phi = build_history('mode', grid, nu=1.0, delay=0.5, window=1.0, mode=1)
    x = integrate_mild(phi, None, TRIVIAL, SelectionPolicy(), None, unit_propagators)
    assert pc_distance(x, x) == 0.0
    y = integrate_mild(phi.scaled(2.0), None, TRIVIAL, SelectionPolicy(), None, unit_propagators)
    assert pc_distance(x, y) == pytest.approx(x.sup_norm(), rel=1e-12)


def test_linear_terminal_errors_follow_the_scalar_law(linear_problem):
    errors = []
    for lam, expected in zip(LINEAR_LAMBDAS, LINEAR_ERRORS):
        _, _, report = steering_iteration(lam, linear_problem)
        assert report.converged
        assert report.terminal_error == pytest.approx(lam / (lam + PSI_33), rel=1e-9)
        assert report.terminal_error == pytest.approx(expected, abs=2e-7)
        assert report.terminal_identity_residual <= 1e-12
        assert report.checks_passed
        errors.append(report.terminal_error)
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_impulsive_run_satisfies_the_terminal_identity(impulsive_problem):
    x, control, report = steering_iteration(0.01, impulsive_problem)
    assert report.converged
    assert report.terminal_identity_residual <= 10 * impulsive_problem.tolerance
    assert report.checks_passed, report.to_dict()
    assert x.jumps
    assert report.to_dict()['lambda'] == 0.01


def test_exhausted_iterations_are_reported(impulsive_problem):
    _, _, report = steering_iteration(0.01, impulsive_problem, max_iter=1)
    assert not report.converged
    assert report.iterations == 1


def test_invalid_lambda(linear_problem):
    with pytest.raises(InvalidInputError):
        steering_iteration(0.0, linear_problem)
    with pytest.raises(InvalidInputError):
        steering_iteration(-1.0, linear_problem)


def test_reachable_target_needs_no_control(linear_problem):
    grid = linear_problem.grid
    linear_problem.phi = build_history('mode', grid, nu=1.0, delay=0.5, window=1.0, mode=1)
    free = free_trajectory(linear_problem)
    linear_problem.target = StateVector(modes_to_values(free.terminal, grid), grid)
    _, control, report = steering_iteration(0.1, linear_problem)
    assert control.sup_norm() <= 1e-12
    assert report.terminal_error <= 1e-12
    assert report.converged


def test_integrate_mild_checks_the_sampling(grid, unit_propagators):
    phi = build_history('zero', grid, nu=1.0, delay=0.5)
    bad = SelectionPath(np.linspace(0.0, 1.0, 7), np.zeros((7, grid.points)), grid)
    with pytest.raises(DimensionError):
        integrate_mild(phi, None, TRIVIAL, SelectionPolicy(), None, unit_propagators, selection=bad)


def test_selection_policy_changes_the_forcing(grid, unit_coefficient):
    evolution = EvolutionOperator(unit_coefficient, 1.0, 6)
    propagators = StepPropagators(evolution, TimeGrid(1.0, 40))
    phi = build_history('mode', grid, nu=1.0, delay=0.25, window=1.0, mode=1)
    spec = InclusionSpec('sine', epsilon=0.1, delay=0.25)
    upper = integrate_mild(phi, None, spec, SelectionPolicy('upper'), None, propagators)
    lower = integrate_mild(phi, None, spec, SelectionPolicy('lower'), None, propagators)
    assert upper.terminal[0] > lower.terminal[0]


@pytest.mark.parametrize('p', [3.0, 1.5])
def test_shipped_impulsive_config_converges_off_hilbert(p):
    problem = build_problem(load_run_config(SHIPPED_IMPULSIVE, grid__p=p))
    errors = []
    for lam in (1e-1, 1e-2, 1e-3):
        x, _, report = steering_iteration(lam, problem)
        assert report.converged, report.to_dict()
        assert report.resolvent_method == 'newton'
        assert report.terminal_identity_residual <= 1e-8
        assert report.checks_passed, report.to_dict()
        assert len(x.jumps) == 2
        errors.append(report.terminal_error)
    assert all(e > 0 for e in errors)
    assert errors[0] > errors[1] > errors[2]
