import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from controllability.error_handler import InvalidInputError
from controllability.inclusion import (
    IntervalField,
    InclusionSpec,
    SelectionPolicy,
    TimeWeight,
    evaluate_F,
    evaluate_F_delayed,
    nemytskii,
    select,
)
from controllability.phase_space import PiecewiseTrajectory, build_history
from controllability.spectral_state import StateVector


@pytest.mark.parametrize('weight', [
    TimeWeight('constant', base=0.2),
    TimeWeight('exponential', base=0.5, rate=1.5),
    TimeWeight('sinusoid', base=0.4, amplitude=0.3, frequency=5.0),
])
def test_weight_l1_norm_is_closed_form(weight):
    reference, _ = quad(lambda t: float(weight.value(t)), 0.0, 2.0)
    assert weight.l1_norm(2.0) == pytest.approx(reference, rel=1e-12)


def test_negative_weights_are_rejected():
    with pytest.raises(InvalidInputError):
        TimeWeight('constant', base=-1.0)
    with pytest.raises(InvalidInputError):
        TimeWeight('sinusoid', base=0.1, amplitude=0.5)


def test_gamma_bound():
    spec = InclusionSpec('tanh', epsilon=0.05, weight=TimeWeight('constant', base=0.2))
    assert spec.gamma(0.3, 2.0) == pytest.approx(0.2 * 1.05 * np.sqrt(np.pi))
    assert spec.gamma_l1(1.0, 2.0) == pytest.approx(0.2 * 1.05 * np.sqrt(np.pi))
    assert not spec.is_trivial
    assert InclusionSpec('zero').is_trivial
    assert InclusionSpec('tanh', weight=TimeWeight('constant', base=0.0)).is_trivial


def test_interval_endpoints(grid):
    spec = InclusionSpec('tanh', epsilon=0.1, weight=TimeWeight('constant', base=2.0))
    v = StateVector(np.sin(grid.nodes), grid)
    field = evaluate_F_delayed(0.0, v, spec)
    assert_allclose(field.lo.values, 2.0 * (np.tanh(v.values) - 0.1))
    assert_allclose(field.hi.values, 2.0 * (np.tanh(v.values) + 0.1))


def test_evaluate_F_reads_the_delayed_value(grid):
    phi = build_history('constant', grid, nu=1.0, delay=0.5, window=1.0, value=0.4)
    spec = InclusionSpec('constant', level=1.0, epsilon=0.0, delay=0.5)
    field = evaluate_F(0.0, phi, spec)
    assert_allclose(field.lo.values, 1.0)
    assert_allclose(field.hi.values, 1.0)


@pytest.mark.parametrize('kind, alpha', [('lower', 0.0), ('upper', 1.0), ('midpoint', 0.5)])
def test_fixed_policies(grid, kind, alpha):
    field = IntervalField(StateVector(-np.ones(grid.points), grid), StateVector(np.ones(grid.points), grid))
    chosen = select(field, SelectionPolicy(kind))
    assert_allclose(chosen.values, 2 * alpha - 1)
    assert field.contains(chosen)


def test_convex_mix_stays_in_unit_interval():
    policy = SelectionPolicy('convex_mix', mix=0.9, mix_amplitude=0.5, mix_frequency=3.0)
    alphas = [policy.alpha(t) for t in np.linspace(0.0, 5.0, 200)]
    assert min(alphas) >= 0.0
    assert max(alphas) == 1.0


def test_seeded_random_is_order_independent():
    policy = SelectionPolicy('seeded_random', seed=11)
    forward = [policy.alpha(0.0, j) for j in range(20)]
    backward = [policy.alpha(0.0, j) for j in reversed(range(20))][::-1]
    assert forward == backward
    assert forward != [SelectionPolicy('seeded_random', seed=12).alpha(0.0, j) for j in range(20)]


def test_bad_policy_parameters():
    with pytest.raises(InvalidInputError):
        SelectionPolicy('nearest')
    with pytest.raises(InvalidInputError):
        SelectionPolicy('convex_mix', mix=1.5)


def test_inverted_interval_is_rejected(grid):
    with pytest.raises(InvalidInputError):
        IntervalField(StateVector(np.ones(grid.points), grid), StateVector(np.zeros(grid.points), grid))


def test_nemytskii_uses_history_before_the_delay(grid):
    phi = build_history('constant', grid, nu=1.0, delay=0.5, window=1.0, value=0.0)
    times = np.linspace(0.0, 1.0, 11)
    x = PiecewiseTrajectory.constant(times, np.array([1.0, 0.0, 0.0]), grid)
    spec = InclusionSpec('sine', epsilon=0.2, delay=0.5)
    path = nemytskii(x, phi, spec, SelectionPolicy('upper'))
    early = times < 0.5 - 1e-12
    assert_allclose(path.values[early], 0.2)
    late = times > 0.5 + 1e-12
    expected = np.sin(x.state_at(0.3).values) + 0.2
    assert_allclose(path.values[late], np.broadcast_to(expected, path.values[late].shape), atol=1e-12)
    assert np.all(path.norms() <= spec.gamma(times, grid.p) + 1e-12)


def test_trivial_inclusion_selects_zero(grid):
    phi = build_history('zero', grid, nu=1.0, delay=0.5)
    x = PiecewiseTrajectory.constant(np.linspace(0.0, 1.0, 6), np.ones(2), grid)
    assert nemytskii(x, phi, InclusionSpec('zero'), SelectionPolicy()).is_zero()
