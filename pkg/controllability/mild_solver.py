"""
Impulsive mild solutions and the fixed-point steering loop.

The recursion x(t_{j+1}) = U(t_{j+1}, t_j) x(t_j+) + int_{t_j}^{t_{j+1}} U(t_{j+1}, s)[Bu(s) + f(s)] ds
is exact in the linear part: the control term uses step-local Gramians and
the selection is integrated as a piecewise-linear forcing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad_vec

from .convergence_monitor import ConvergenceMonitor
from .error_handler import ConfigurationError, DimensionError, InvalidInputError
from .evolution import EvolutionOperator, StepPropagators, TimeGrid
from .inclusion import InclusionSpec, SelectionPath, SelectionPolicy, nemytskii, selection_at
from .phase_space import HistorySegment, PiecewiseTrajectory, check_history_growth
from .spectral_state import SpatialGrid, StateVector, lp_norm_values, modes_to_values, values_to_modes
from .steering import (
    ControlSignal,
    SteeringContext,
    control_bound,
    cost_functional,
    feedback_control,
)

KERNEL_SHAPES = ("sine", "constant")


def _profile(kind: str, mode: int, nodes: np.ndarray, key: str) -> np.ndarray:
    if kind == "sine":
        return np.sin(mode * nodes)
    if kind == "constant":
        return np.ones_like(nodes)
    raise ConfigurationError(f"unknown kernel profile '{kind}', expected one of {KERNEL_SHAPES}", key=key)


@dataclass(frozen=True)
class Impulse:
    """I(x)(xi) = int_0^pi rho(xi, eta) cos^2(x(eta)) d eta on the spatial grid."""

    time: float
    kernel: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=float)
        if kernel.shape != (self.grid.points, self.grid.points):
            raise DimensionError(f"impulse kernel has shape {kernel.shape}, grid needs {(self.grid.points,) * 2}")
        if not np.all(np.isfinite(kernel)):
            raise InvalidInputError("impulse kernel contains non-finite entries")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)

    @classmethod
    def separable(cls, time: float, grid: SpatialGrid, scale: float = 1.0, source: str = "sine",
                  source_mode: int = 1, response: str = "sine", response_mode: int = 1, key: str = "impulses"):
        """rho(xi, eta) = scale * s(xi) * r(eta)."""
        s = _profile(source, source_mode, grid.nodes, f"{key}.source")
        r = _profile(response, response_mode, grid.nodes, f"{key}.response")
        return cls(time, scale * np.outer(s, r), grid)

    @classmethod
    def from_table(cls, time: float, path, grid: SpatialGrid, key: str = "impulses"):
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"impulse kernel table {path} not found", key=f"{key}.file")
        kernel = np.loadtxt(path, delimiter=",", ndmin=2)
        if kernel.shape != (grid.points, grid.points):
            raise ConfigurationError(f"kernel table has shape {kernel.shape}, grid needs {(grid.points,) * 2}",
                                     key=f"{key}.file")
        return cls(time, kernel, grid)

    @property
    def bound(self) -> float:
        """d_k = || sum_eta w |rho(., eta)| ||_p, valid since 0 <= cos^2 <= 1."""
        envelope = np.abs(self.kernel) @ self.grid.weights
        return float(lp_norm_values(envelope, self.grid.weights, self.grid.p))

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return self.kernel @ (self.grid.weights * np.cos(values) ** 2)

    def apply(self, x: StateVector) -> StateVector:
        return StateVector(self.apply_values(x.values), self.grid)


def apply_impulse(impulse: Impulse, x: StateVector) -> StateVector:
    return impulse.apply(x)


@dataclass(frozen=True)
class ImpulseSchedule:
    """Impulses together with the solver nodes their times snap onto."""

    impulses: Tuple[Impulse, ...] = ()
    nodes: Tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.impulses) != len(self.nodes):
            raise DimensionError("every impulse needs exactly one grid node")

    @classmethod
    def on_grid(cls, impulses: Sequence[Impulse], time_grid: TimeGrid) -> "ImpulseSchedule":
        snapped = TimeGrid(time_grid.horizon, time_grid.steps, tuple(i.time for i in impulses), time_grid.snap)
        return cls(tuple(impulses), snapped.impulse_nodes)

    def __len__(self) -> int:
        return len(self.impulses)

    @property
    def bounds(self) -> List[float]:
        return [impulse.bound for impulse in self.impulses]

    @property
    def total_bound(self) -> float:
        return float(sum(self.bounds))

    def by_node(self) -> Dict[int, Impulse]:
        return dict(zip(self.nodes, self.impulses))

    def apply_impulse(self, k: int, x: StateVector) -> StateVector:
        return self.impulses[k].apply(x)

    def jump_modes(self, node: int, left_coeffs: np.ndarray, grid: SpatialGrid) -> np.ndarray:
        impulse = self.by_node()[node]
        values = impulse.apply_values(modes_to_values(left_coeffs, grid))
        return values_to_modes(values, grid, left_coeffs.size)

    def jumps_along(self, x: PiecewiseTrajectory) -> Dict[int, np.ndarray]:
        """I_k(x(tau_k)) in mode coordinates, evaluated at the left values."""
        return {node: self.jump_modes(node, x.coeffs[node], x.grid) for node in self.nodes}


def _delayed_values(s: float, coeffs: np.ndarray, rights: Dict[int, np.ndarray], times: np.ndarray,
                    known: int, phi: HistorySegment, grid: SpatialGrid) -> StateVector:
    """x~(s) from the first ``known`` nodes of a trajectory under construction."""
    if s <= 0:
        return phi.value_at(s)
    s = min(s, times[known - 1])
    i = int(np.searchsorted(times, s, side="left"))
    if abs(times[i] - s) <= 1e-12 * max(1.0, times[-1]):
        return StateVector(modes_to_values(coeffs[i], grid), grid)
    lo = i - 1
    frac = (s - times[lo]) / (times[i] - times[lo])
    start = rights.get(lo, coeffs[lo])
    return StateVector(modes_to_values((1.0 - frac) * start + frac * coeffs[i], grid), grid)


def _control_increments(control: Optional[ControlSignal], propagators: StepPropagators,
                        B: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if control is None or not np.any(control.coeffs):
        return None
    if propagators.step_gramians is not None and control.dual.size == propagators.evolution.modes:
        return propagators.control_increments(control.dual)
    if B is None:
        raise InvalidInputError("a control without its dual state needs the input matrix B")
    return propagators.forcing_increments(control.coeffs @ B.T)


def _march(phi: HistorySegment, control: Optional[ControlSignal], spec: InclusionSpec, policy: SelectionPolicy,
           impulses: Optional[ImpulseSchedule], propagators: StepPropagators,
           selection_modes: Optional[np.ndarray], B: Optional[np.ndarray] = None):
    grid = phi.grid
    times = propagators.time_grid.times
    modes = propagators.evolution.modes
    K = propagators.steps
    impulses = impulses or ImpulseSchedule()
    impulse_nodes = set(impulses.nodes)
    if impulse_nodes and max(impulse_nodes) >= K:
        raise ConfigurationError("impulse node outside the solver grid", key="impulses")

    coeffs = np.zeros((K + 1, modes))
    coeffs[0] = values_to_modes(phi.values[-1], grid, modes)
    rights: Dict[int, np.ndarray] = {}
    control_incr = _control_increments(control, propagators, B)

    on_the_fly = selection_modes is None and not spec.is_trivial
    if selection_modes is None:
        selection_modes = np.zeros((K + 1, modes))
        forcing_incr = None
    else:
        forcing_incr = propagators.forcing_increments(selection_modes)
    selection_values = np.zeros((K + 1, grid.points)) if on_the_fly else None

    if on_the_fly:
        delayed = _delayed_values(times[0] - spec.delay, coeffs, rights, times, 1, phi, grid)
        selection_values[0] = selection_at(times[0], 0, delayed, spec, policy)
        selection_modes[0] = values_to_modes(selection_values[0], grid, modes)

    h = propagators.time_grid.step
    for j in range(K):
        start = coeffs[j]
        if j in impulse_nodes:
            start = start + impulses.jump_modes(j, coeffs[j], grid)
            rights[j] = start
        nxt = propagators.step_mult[j] * start
        if on_the_fly:
            # method of steps: the lag is clamped to the last known node when r < h
            delayed = _delayed_values(times[j + 1] - spec.delay, coeffs, rights, times, j + 1, phi, grid)
            selection_values[j + 1] = selection_at(times[j + 1], j + 1, delayed, spec, policy)
            selection_modes[j + 1] = values_to_modes(selection_values[j + 1], grid, modes)
            slope = (selection_modes[j + 1] - selection_modes[j]) / h
            nxt = nxt + propagators.w0[j] * selection_modes[j] + propagators.w1[j] * slope
        elif forcing_incr is not None:
            nxt = nxt + forcing_incr[j]
        if control_incr is not None:
            nxt = nxt + control_incr[j]
        coeffs[j + 1] = nxt

    trajectory = PiecewiseTrajectory(times, coeffs, grid, rights)
    if on_the_fly:
        return trajectory, SelectionPath(times, selection_values, grid)
    return trajectory, None


def integrate_mild(phi: HistorySegment, control: Optional[ControlSignal], spec: InclusionSpec,
                   policy: SelectionPolicy, impulses: Optional[ImpulseSchedule], propagators: StepPropagators,
                   selection: Optional[SelectionPath] = None, B: Optional[np.ndarray] = None) -> PiecewiseTrajectory:
    """
    Mild solution on the propagators' time grid. A given selection is frozen;
    without one, f(t_j) is selected from F(t_j, x~(t_j - r)) while stepping.
    """
    modes = propagators.evolution.modes
    if control is not None and control.coeffs.shape[0] != propagators.steps + 1:
        raise DimensionError("control is not sampled on the solver grid")
    selection_modes = None
    if selection is not None:
        if selection.values.shape[0] != propagators.steps + 1:
            raise DimensionError("selection is not sampled on the solver grid")
        selection_modes = selection.modes(modes)
    trajectory, _ = _march(phi, control, spec, policy, impulses, propagators, selection_modes, B)
    return trajectory


def mild_global_formula(phi: HistorySegment, control: Optional[ControlSignal], selection_modes: Optional[np.ndarray],
                        trajectory: PiecewiseTrajectory, impulses: Optional[ImpulseSchedule],
                        evolution: EvolutionOperator, B: np.ndarray, t: float) -> np.ndarray:
    """
    x(t) = U(t,0) phi(0) + int_0^t U(t,s)[Bu(s) + f(s)] ds + sum_{tau_k < t} U(t,tau_k) I_k,
    by adaptive quadrature; jumps are read from the trajectory.
    """
    grid = trajectory.grid
    modes = evolution.modes
    times = trajectory.times
    x0 = values_to_modes(phi.values[-1], grid, modes)
    result = evolution.multipliers(t, 0.0) * x0

    eta = None if control is None else control.dual
    has_forcing = selection_modes is not None and np.any(selection_modes)
    if (eta is not None and np.any(eta)) or has_forcing:
        def integrand(s):
            value = np.zeros(modes)
            if eta is not None and np.any(eta):
                u = B.T @ (evolution.multipliers(evolution.horizon, s) * eta)
                value += B @ u
            if has_forcing:
                value += np.array([np.interp(s, times, selection_modes[:, n]) for n in range(modes)])
            return evolution.multipliers(t, s) * value

        inner = times[(times > 0) & (times < t)]
        points = list(inner) if has_forcing and inner.size else None
        integral, _ = quad_vec(integrand, 0.0, t, epsabs=1e-13, epsrel=1e-11, points=points, limit=10000)
        result = result + integral

    if impulses is not None:
        for node in impulses.nodes:
            if times[node] < t:
                result = result + evolution.multipliers(t, times[node]) * trajectory.jump(node)
    return result


def pc_distance(x: PiecewiseTrajectory, y: PiecewiseTrajectory) -> float:
    """sup-distance in PC([0,T]; X_p) over nodes and right limits."""
    if x.coeffs.shape != y.coeffs.shape:
        raise DimensionError(f"trajectory shapes differ: {x.coeffs.shape} vs {y.coeffs.shape}")
    grid = x.grid
    diff = modes_to_values(x.coeffs - y.coeffs, grid)
    best = float(np.max(lp_norm_values(diff, grid.weights, grid.p)))
    for node in set(x.jumps) | set(y.jumps):
        right = modes_to_values(x.right_coeffs(node) - y.right_coeffs(node), grid)
        best = max(best, float(lp_norm_values(right, grid.weights, grid.p)))
    return best


def _relaxed(new: PiecewiseTrajectory, old: PiecewiseTrajectory, omega: float) -> PiecewiseTrajectory:
    if omega == 1.0:
        return new
    coeffs = omega * new.coeffs + (1.0 - omega) * old.coeffs
    jumps = {node: omega * new.right_coeffs(node) + (1.0 - omega) * old.right_coeffs(node)
             for node in set(new.jumps) | set(old.jumps)}
    return PiecewiseTrajectory(new.times, coeffs, new.grid, jumps)


@dataclass
class SteeringProblem:
    """Everything one steering run needs besides lambda."""

    grid: SpatialGrid
    propagators: StepPropagators
    context: SteeringContext
    phi: HistorySegment
    target: StateVector
    inclusion: InclusionSpec
    policy: SelectionPolicy
    impulses: ImpulseSchedule = field(default_factory=ImpulseSchedule)
    tolerance: float = 1e-8
    max_iter: int = 200
    relaxation: float = 1.0
    fallback_relaxation: float = 0.5
    growth_samples: int = 100
    lambdas: Tuple[float, ...] = (0.1,)
    unique_samples: int = 64
    singular_floor: float = 1e-10

    @property
    def modes(self) -> int:
        return self.propagators.evolution.modes

    @property
    def horizon(self) -> float:
        return self.propagators.evolution.horizon

    @property
    def phi_modes(self) -> np.ndarray:
        return values_to_modes(self.phi.values[-1], self.grid, self.modes)

    @property
    def target_modes(self) -> np.ndarray:
        return values_to_modes(self.target.values, self.grid, self.modes)

    def data_size(self) -> float:
        """M = ||x_T|| + ||phi(0)|| + ||gamma||_L1 + sum d_k."""
        w, p = self.grid.weights, self.grid.p
        return float(
            lp_norm_values(self.target.values, w, p)
            + lp_norm_values(self.phi.values[-1], w, p)
            + self.inclusion.gamma_l1(self.horizon, p)
            + self.impulses.total_bound
        )


@dataclass
class SolveReport:
    lam: float
    converged: bool
    iterations: int
    corrections: int
    increment: float
    terminal_error: float
    control_l2: float
    cost: float
    terminal_identity_residual: float
    control_bound: Dict
    growth_check: Dict
    orbit_bound: Dict
    relaxation: float
    resolvent_method: str = "direct"
    history: List[Dict] = field(default_factory=list)

    @property
    def checks_passed(self) -> bool:
        return bool(self.control_bound.get('holds') and self.growth_check.get('all_hold')
                    and self.orbit_bound.get('holds'))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['lambda'] = data.pop('lam')
        data['checks_passed'] = self.checks_passed
        return data


def free_trajectory(problem: SteeringProblem) -> PiecewiseTrajectory:
    return integrate_mild(problem.phi, None, problem.inclusion, problem.policy, problem.impulses, problem.propagators)


def orbit_bound(problem: SteeringProblem, x: PiecewiseTrajectory, control: ControlSignal) -> Dict:
    """sup ||x(t)|| <= ||phi(0)|| + M_B ||u||_L2 sqrt(T) + ||gamma||_L1 + sum d_k."""
    w, p = problem.grid.weights, problem.grid.p
    bound = (float(lp_norm_values(problem.phi.values[-1], w, p))
             + problem.context.control.norm_bound * control.l2_norm * np.sqrt(problem.horizon)
             + problem.inclusion.gamma_l1(problem.horizon, p)
             + problem.impulses.total_bound)
    observed = x.sup_norm()
    return {'sup_norm': observed, 'bound': bound, 'margin': bound - observed,
            'holds': observed <= bound * (1.0 + 1e-9) + 1e-12}


def growth_summary(problem: SteeringProblem, x: PiecewiseTrajectory) -> Dict:
    samples = np.linspace(0.0, problem.horizon, problem.growth_samples)
    results = [check_history_growth(x, problem.phi, t) for t in samples]
    return {
        'samples': len(results),
        'all_hold': all(r['holds'] for r in results),
        'min_margin': min(r['margin'] for r in results),
        'violations': [r['t'] for r in results if not r['holds']]
    }


def steering_iteration(lam: float, problem: SteeringProblem, tolerance: Optional[float] = None,
                       max_iter: Optional[int] = None, logger=None):
    """
    Fixed-point loop x -> selection -> feedback control -> mild solution.

    Returns (trajectory, control, report); running out of iterations yields a
    non-converged report rather than an exception.
    """
    if not lam > 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    tolerance = problem.tolerance if tolerance is None else tolerance
    max_iter = problem.max_iter if max_iter is None else max_iter
    if not tolerance > 0:
        raise InvalidInputError(f"tolerance must be positive, got {tolerance}")

    ctx = problem.context
    phi_modes = problem.phi_modes
    target_modes = problem.target_modes
    monitor = ConvergenceMonitor()
    omega = problem.relaxation

    x = free_trajectory(problem)
    control = ControlSignal.zeros(x.times, problem.modes)
    feedback = None
    increment = float("inf")
    converged = False
    corrections = 0
    iterations = 0

    while iterations < max_iter:
        iterations += 1
        selection = nemytskii(x, problem.phi, problem.inclusion, problem.policy)
        selection_modes = selection.modes(problem.modes)
        feedback = feedback_control(lam, x, selection_modes, problem.impulses, phi_modes, target_modes, ctx)
        control = feedback.control
        x_new, _ = _march(problem.phi, control, problem.inclusion, problem.policy, problem.impulses,
                          problem.propagators, selection_modes)
        x_new = _relaxed(x_new, x, omega)
        increment = pc_distance(x_new, x)
        x = x_new
        monitor.monitor(increment, relaxation=omega, resolvent_residual=feedback.resolvent.residual)
        if logger:
            logger.log_iteration(lam, iterations, increment, omega, feedback.resolvent.residual)
        if increment > tolerance:
            corrections += 1
        else:
            converged = True
            break
        if omega == 1.0 and monitor.is_oscillating():
            omega = problem.fallback_relaxation
            if logger:
                logger.warning("Fixed-point increments stopped decreasing, switching to relaxation",
                               {'lambda': lam, 'iteration': iterations, 'relaxation': omega})

    # terminal identity x(T) - x_T + lam R(lam, Psi) g(x) = 0 at a fixed point
    selection_modes = nemytskii(x, problem.phi, problem.inclusion, problem.policy).modes(problem.modes)
    final = feedback_control(lam, x, selection_modes, problem.impulses, phi_modes, target_modes, ctx)
    identity = modes_to_values(x.terminal - target_modes + final.resolvent.z.coeffs, problem.grid)
    identity_residual = float(lp_norm_values(identity, problem.grid.weights, problem.grid.p))

    error_values = modes_to_values(x.terminal, problem.grid) - problem.target.values
    terminal_error = float(lp_norm_values(error_values, problem.grid.weights, problem.grid.p))
    report = SolveReport(
        lam=float(lam),
        converged=converged,
        iterations=iterations,
        corrections=corrections,
        increment=float(increment),
        terminal_error=terminal_error,
        control_l2=control.l2_norm,
        cost=cost_functional(terminal_error, control.energy, lam),
        terminal_identity_residual=identity_residual,
        control_bound=control_bound(lam, control, problem.data_size(), ctx.control, problem.grid),
        growth_check=growth_summary(problem, x),
        orbit_bound=orbit_bound(problem, x, control),
        relaxation=omega,
        resolvent_method=feedback.resolvent.method if feedback else "direct",
        history=list(monitor.history)
    )
    if logger:
        logger.log_solve_report(report.to_dict())
    return x, control, report
