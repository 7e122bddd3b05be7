"""
Control operator, controllability Gramian, the duality resolvent and the
feedback steering law.

Mode coordinates are used throughout: a dual element x* is represented by
its coefficients against w_n, so U* and B* act on the same arrays as U and B.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Optional

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import cho_factor, cho_solve, svdvals

from .error_handler import DimensionError, DomainError, InvalidInputError, SolverFailureError
from .evolution import CoefficientSpec, EvolutionOperator, StepPropagators
from .spectral_state import (
    ModeVector,
    SpatialGrid,
    duality_jacobian,
    duality_values,
    lp_norm_values,
    modes_to_values,
    values_to_modes,
)


@dataclass(frozen=True)
class ControlVector:
    """Coefficients u_2..u_N; the control space has no w_1 component."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 1:
            raise DimensionError(f"control vector must be 1-d, got shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInputError("control vector contains non-finite coefficients")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def unit(cls, n: int, modes: int) -> "ControlVector":
        """Control with u_n = 1 (n >= 2)."""
        coeffs = np.zeros(modes - 1)
        coeffs[n - 2] = 1.0
        return cls(coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class ControlOperator:
    """Bu = coupling * u_2 w_1 + sum_{n>=2} u_n w_n, scaled by gain."""

    modes: int
    coupling: float = 2.0
    gain: float = 1.0

    def __post_init__(self):
        if self.modes < 2:
            raise InvalidInputError(f"control operator needs at least 2 modes, got {self.modes}")

    @cached_property
    def matrix(self) -> np.ndarray:
        B = np.zeros((self.modes, self.modes - 1))
        B[0, 0] = self.coupling
        B[np.arange(1, self.modes), np.arange(self.modes - 1)] = 1.0
        B *= self.gain
        B.setflags(write=False)
        return B

    @cached_property
    def input_gram(self) -> np.ndarray:
        gram = self.matrix @ self.matrix.T
        gram.setflags(write=False)
        return gram

    @property
    def norm_bound(self) -> float:
        return abs(self.gain) * float(np.hypot(self.coupling, 1.0))

    def apply_B(self, u: ControlVector) -> ModeVector:
        if u.coeffs.size != self.modes - 1:
            raise DimensionError(f"control has {u.coeffs.size} coefficients, expected {self.modes - 1}")
        return ModeVector(self.matrix @ u.coeffs)

    def apply_B_star(self, xs: ModeVector) -> ControlVector:
        if xs.modes != self.modes:
            raise DimensionError(f"dual element has {xs.modes} modes, expected {self.modes}")
        return ControlVector(self.matrix.T @ xs.coeffs)


@dataclass(frozen=True)
class GramianMatrix:
    matrix: np.ndarray
    horizon: float
    coefficient: CoefficientSpec

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"Gramian must be square, got shape {matrix.shape}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def modes(self) -> int:
        return self.matrix.shape[0]

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))))

    def rows(self) -> List[Dict]:
        return [
            {'m': m + 1, 'n': n + 1, 'value': float(self.matrix[m, n])}
            for m in range(self.modes) for n in range(self.modes)
        ]


def _pair_wavenumbers(modes: int) -> np.ndarray:
    n2 = np.arange(1, modes + 1, dtype=float) ** 2
    return n2[:, None] + n2[None, :]


def gramian(horizon: float, coefficient: CoefficientSpec, modes: int,
            control: Optional[ControlOperator] = None) -> GramianMatrix:
    """Psi = int_0^T U(T,t) B B* U*(T,t) dt, entrywise exact in the decay integrals."""
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    control = control or ControlOperator(modes)
    evolution = EvolutionOperator(coefficient, horizon, modes)
    pair_k = _pair_wavenumbers(modes)
    mask = control.input_gram != 0
    ks = np.unique(pair_k[mask])
    m0, _ = evolution.decay_moments(ks, 0.0, horizon, horizon)
    integrals = np.zeros_like(pair_k)
    integrals[mask] = m0[np.searchsorted(ks, pair_k[mask])]
    matrix = control.input_gram * integrals
    return GramianMatrix(0.5 * (matrix + matrix.T), horizon, coefficient)


def gramian_by_factorization(horizon: float, coefficient: CoefficientSpec, modes: int,
                             control: Optional[ControlOperator] = None) -> GramianMatrix:
    """L_T L_T* on basis vectors by adaptive quadrature of U(T,t) B B* U*(T,t)."""
    control = control or ControlOperator(modes)
    evolution = EvolutionOperator(coefficient, horizon, modes)
    B = control.matrix

    def integrand(t):
        d = evolution.multipliers(horizon, t)
        factor = d[:, None] * B
        return (factor @ factor.T).ravel()

    values, _ = quad_vec(integrand, 0.0, horizon, epsabs=1e-13, epsrel=1e-11,
                         points=coefficient.breakpoints(0.0, horizon))
    return GramianMatrix(values.reshape(modes, modes), horizon, coefficient)


@dataclass(frozen=True)
class ResolventSolution:
    z: ModeVector
    residual: float
    iterations: int
    method: str


def _residual(lam, psi, z, h, grid):
    dual = values_to_modes(duality_values(modes_to_values(z, grid), grid.weights, grid.p), grid, z.size)
    return lam * z + psi @ dual - lam * h


def resolvent_solve(lam: float, psi: GramianMatrix, h: ModeVector, grid: SpatialGrid,
                    tolerance: float = 1e-10, max_iter: int = 50, method: str = "auto",
                    initial: str = "linear") -> ResolventSolution:
    """
    Solve lam z + Psi J[z] = lam h, i.e. z = lam R(lam, Psi) h.

    p = 2 is a symmetric positive definite linear solve. Otherwise a damped
    Newton iteration runs on the residual with the duality-map Jacobian
    assembled on the spatial grid.
    """
    if not lam > 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    if psi.modes != h.modes:
        raise DimensionError(f"Gramian has {psi.modes} modes, data has {h.modes}")
    if method not in ("auto", "direct", "newton"):
        raise InvalidInputError(f"unknown resolvent method '{method}'")
    if method == "direct" and grid.p != 2.0:
        raise InvalidInputError("the direct resolvent solve applies to p = 2 only")

    A = psi.matrix
    b = h.coeffs
    scale = lam * float(np.linalg.norm(b))
    if scale == 0.0:
        return ResolventSolution(ModeVector.zeros(h.modes), 0.0, 0, "direct")

    factor = cho_factor(lam * np.eye(h.modes) + 0.5 * (A + A.T))
    linear = cho_solve(factor, lam * b)
    if grid.p == 2.0 and method != "newton":
        res = float(np.linalg.norm(lam * linear + A @ linear - lam * b))
        return ResolventSolution(ModeVector(linear), res / scale, 0, "direct")

    z = linear.copy() if initial == "linear" else b.copy()
    S = grid.basis(h.modes)
    F = _residual(lam, A, z, b, grid)
    norm_F = float(np.linalg.norm(F))
    iterations = 0
    while norm_F > tolerance * scale:
        if iterations >= max_iter:
            raise SolverFailureError("resolvent Newton iteration did not converge", norm_F / scale, iterations)
        values = S @ z
        jac = lam * np.eye(h.modes) + A @ (S.T * grid.weights) @ duality_jacobian(values, grid.weights, grid.p) @ S
        step = np.linalg.solve(jac, -F)
        t = 1.0
        while True:
            trial = z + t * step
            F_trial = _residual(lam, A, trial, b, grid)
            norm_trial = float(np.linalg.norm(F_trial))
            if norm_trial <= (1.0 - 1e-4 * t) * norm_F or t < 1e-8:
                break
            t *= 0.5
        if norm_trial >= norm_F and t < 1e-8:
            raise SolverFailureError("resolvent line search stalled", norm_F / scale, iterations)
        z, F, norm_F = trial, F_trial, norm_trial
        iterations += 1
    return ResolventSolution(ModeVector(z), norm_F / scale, iterations, "newton")


def resolvent_decay(lambdas: Iterable[float], psi: GramianMatrix, h: ModeVector, grid: SpatialGrid,
                    **solver_options) -> List[Dict]:
    """||lam R(lam, Psi) h|| over a lambda list; tends to 0 as lam decreases when the pair is controllable."""
    rows = []
    for lam in lambdas:
        solution = resolvent_solve(lam, psi, h, grid, **solver_options)
        rows.append({
            'lambda': float(lam),
            'norm': float(lp_norm_values(modes_to_values(solution.z.coeffs, grid), grid.weights, grid.p)),
            'residual': solution.residual
        })
    return rows


@dataclass(frozen=True)
class ControlSignal:
    """u(t_j) = B* U*(T, t_j) eta on the solver grid, with eta the dual state."""

    times: np.ndarray
    coeffs: np.ndarray
    dual: np.ndarray
    energy: float = 0.0

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        coeffs = np.array(self.coeffs, dtype=float)
        dual = np.array(self.dual, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[0] != times.size:
            raise DimensionError(f"control has shape {coeffs.shape}, expected ({times.size}, N-1)")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInputError("control contains non-finite coefficients")
        for array in (times, coeffs, dual):
            array.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "dual", dual)

    @classmethod
    def zeros(cls, times, modes: int) -> "ControlSignal":
        return cls(times, np.zeros((len(times), modes - 1)), np.zeros(modes), 0.0)

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(max(self.energy, 0.0)))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.coeffs, axis=1)

    def sup_norm(self) -> float:
        return float(np.max(self.norms()))

    def at(self, j: int) -> ControlVector:
        return ControlVector(self.coeffs[j])


@dataclass(frozen=True)
class SteeringContext:
    """Data shared by every feedback evaluation of one run."""

    grid: SpatialGrid
    propagators: StepPropagators
    control: ControlOperator
    gramian: GramianMatrix
    newton_tolerance: float = 1e-10
    newton_max_iter: int = 50

    @classmethod
    def build(cls, grid: SpatialGrid, propagators: StepPropagators, control: ControlOperator,
              newton_tolerance: float = 1e-10, newton_max_iter: int = 50) -> "SteeringContext":
        evolution = propagators.evolution
        psi = GramianMatrix(propagators.assembled_gramian(), evolution.horizon, evolution.coefficient)
        return cls(grid, propagators, control, psi, newton_tolerance, newton_max_iter)

    @property
    def times(self) -> np.ndarray:
        return self.propagators.time_grid.times


@dataclass(frozen=True)
class FeedbackResult:
    control: ControlSignal
    data: np.ndarray
    resolvent: ResolventSolution


def steering_data(x, selection_modes: np.ndarray, impulses, phi_modes: np.ndarray, target_modes: np.ndarray,
                  context: SteeringContext) -> np.ndarray:
    """g(x) = x_T - U(T,0) phi(0) - int U(T,s) f(s) ds - sum_k U(T,tau_k) I_k(x(tau_k))."""
    prop = context.propagators
    g = target_modes - prop.to_terminal[0] * phi_modes
    if np.any(selection_modes):
        g = g - prop.terminal_sum(prop.forcing_increments(selection_modes))
    if impulses is not None:
        for node, jump in impulses.jumps_along(x).items():
            g = g - prop.to_terminal[node] * jump
    return g


def control_from_dual(eta: np.ndarray, context: SteeringContext) -> ControlSignal:
    coeffs = (context.propagators.to_terminal * eta[None, :]) @ context.control.matrix
    energy = float(eta @ context.gramian.matrix @ eta)
    return ControlSignal(context.times, coeffs, eta, energy)


def feedback_control(lam: float, x, selection_modes: np.ndarray, impulses, phi_modes: np.ndarray,
                     target_modes: np.ndarray, context: SteeringContext) -> FeedbackResult:
    """u(t) = B* U*(T,t) J[R(lam, Psi) g(x)]."""
    g = steering_data(x, selection_modes, impulses, phi_modes, target_modes, context)
    solution = resolvent_solve(lam, context.gramian, ModeVector(g), context.grid,
                               tolerance=context.newton_tolerance, max_iter=context.newton_max_iter)
    grid = context.grid
    dual = duality_values(modes_to_values(solution.z.coeffs, grid), grid.weights, grid.p)
    # J is positively homogeneous, so J[z / lam] = J[z] / lam
    eta = values_to_modes(dual, grid, g.size) / lam
    return FeedbackResult(control_from_dual(eta, context), g, solution)


def embedding_constant(grid: SpatialGrid, modes: Optional[int] = None) -> float:
    """
    c with ||P_N v||_2 <= c ||v||_q for grid functions, q the conjugate exponent.

    For q >= 2 this is Hoelder on [0, pi]. For q < 2 the pairing with an N-mode
    sine polynomial w gives c = sup ||w||_p / ||w||_2 <= (2N/pi)^(1/2 - 1/p),
    from ||w||_inf <= sqrt(2N/pi) ||w||_2; the spike bound h^(1/2 - 1/q) caps it
    on coarse grids.
    """
    q = grid.q
    if q >= 2.0:
        return float(np.pi ** (0.5 - 1.0 / q))
    spike = float(grid.step ** (0.5 - 1.0 / q))
    if modes is None:
        return spike
    return min(spike, float((2.0 * modes / np.pi) ** (0.5 - 1.0 / grid.p)))


def control_bound(lam: float, control: ControlSignal, size: float, control_op: ControlOperator,
                  grid: SpatialGrid) -> Dict:
    """sup_t ||u(t)|| <= C M M_B / lam with C = 1 for the diagonal evolution family."""
    factor = 1.0 if grid.p == 2.0 else embedding_constant(grid, control_op.modes)
    bound = factor * size * control_op.norm_bound / lam
    observed = control.sup_norm()
    return {
        'sup_norm': observed,
        'bound': bound,
        'margin': bound - observed,
        'M': size,
        'M_B': control_op.norm_bound,
        'holds': observed <= bound * (1.0 + 1e-9) + 1e-14
    }


def cost_functional(terminal_error: float, energy: float, lam: float) -> float:
    """||x(T) - x_T||^2 + lam int ||u||^2."""
    return terminal_error ** 2 + lam * energy


def sampling_operator(horizon: float, coefficient: CoefficientSpec, modes: int, samples: int,
                      control: Optional[ControlOperator] = None) -> np.ndarray:
    """Stacked rows of x* -> B* U*(T, t_j) x* at equally spaced t_j in [0, T]."""
    control = control or ControlOperator(modes)
    evolution = EvolutionOperator(coefficient, horizon, modes)
    times = np.linspace(0.0, horizon, samples)
    blocks = [control.matrix.T * evolution.multipliers(horizon, t)[None, :] for t in times]
    return np.vstack(blocks)


def unique_continuation_check(horizon: float, coefficient: CoefficientSpec, modes: int, samples: int,
                              control: Optional[ControlOperator] = None, floor: float = 1e-10) -> Dict:
    """B* U*(T,t) x* = 0 on the sample times forces x* = 0 at truncation N."""
    if samples < modes:
        raise InvalidInputError(f"need at least {modes} samples, got {samples}")
    operator = sampling_operator(horizon, coefficient, modes, samples, control)
    sigma = svdvals(operator)
    smallest = float(sigma[-1]) if sigma.size >= modes else 0.0
    passed = smallest > floor
    return {
        'name': 'unique_continuation',
        'is_valid': passed,
        'smallest_singular_value': smallest,
        'largest_singular_value': float(sigma[0]) if sigma.size else 0.0,
        'floor': floor,
        'modes': modes,
        'samples': samples,
        'errors': [] if passed else [f"sampling operator has a kernel: smallest singular value {smallest:.3e} <= {floor:.1e}"],
        'warnings': []
    }
