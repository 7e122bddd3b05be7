"""
Evolution family U(t, s) of A(t) = a(t) d^2/dxi^2 with Dirichlet conditions.

In the sine basis U(t, s) is diagonal with multipliers
E_n(s, t) = exp(-n^2 mu(s, t)), mu(s, t) = int_s^t a. The adjoint has the same
multipliers. Besides the operator itself this module owns the time grid and
the per-step propagators used by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, quad_vec

from .error_handler import (
    ConfigurationError,
    DimensionError,
    DomainError,
    InvalidInputError,
    OrderingError,
)
from .spectral_state import ModeVector

COEFFICIENT_KINDS = ("constant", "affine", "table", "holder")
SERIES_CUTOFF = 1e-2


@dataclass(frozen=True)
class CoefficientSpec:
    """Diffusion coefficient a(t) with its declared Hoelder modulus."""

    kind: str = "constant"
    base: float = 1.0
    slope: float = 0.0
    times: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()
    center: float = 0.0
    amplitude: float = 0.0
    holder_order: float = 1.0
    holder_const: float = 0.0

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise InvalidInputError(f"unknown coefficient kind '{self.kind}', expected one of {COEFFICIENT_KINDS}")
        if not (0.0 < self.holder_order <= 1.0):
            raise InvalidInputError(f"holder_order must lie in (0, 1], got {self.holder_order}")
        if self.holder_const < 0:
            raise InvalidInputError(f"holder_const must be nonnegative, got {self.holder_const}")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind == "table":
            if len(self.times) < 2 or len(self.times) != len(self.values):
                raise InvalidInputError("table coefficient needs matching times and values with at least two knots")
            if np.any(np.diff(self.times) <= 0):
                raise InvalidInputError("table coefficient times must be strictly increasing")

    @cached_property
    def _knots(self):
        t = np.asarray(self.times)
        v = np.asarray(self.values)
        cumulative = np.concatenate(([0.0], cumulative_trapezoid(v, t)))
        return t, v, cumulative

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.base)
        if self.kind == "affine":
            return self.base + self.slope * t
        if self.kind == "table":
            knots, vals, _ = self._knots
            return np.interp(t, knots, vals)
        return self.base + self.amplitude * np.abs(t - self.center) ** self.holder_order

    def antiderivative(self, t):
        """A(t) with mu(s, t) = A(t) - A(s)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return self.base * t
        if self.kind == "affine":
            return self.base * t + 0.5 * self.slope * t ** 2
        if self.kind == "table":
            knots, vals, cumulative = self._knots
            idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, knots.size - 2)
            dt = t - knots[idx]
            slope = (vals[idx + 1] - vals[idx]) / (knots[idx + 1] - knots[idx])
            return cumulative[idx] + vals[idx] * dt + 0.5 * slope * dt ** 2
        kappa = self.holder_order

        def power(y):
            return np.sign(y) * np.abs(y) ** (kappa + 1.0) / (kappa + 1.0)

        return self.base * t + self.amplitude * (power(t - self.center) - power(-self.center))

    def breakpoints(self, lo: float, hi: float):
        """Points inside (lo, hi) where a(t) is not smooth."""
        if self.kind == "table":
            pts = np.asarray(self.times)
        elif self.kind == "holder":
            pts = np.asarray([self.center])
        else:
            return None
        inside = pts[(pts > lo) & (pts < hi)]
        return list(inside) if inside.size else None

    def covers(self, horizon: float) -> bool:
        if self.kind != "table":
            return True
        return self.times[0] <= 0.0 and self.times[-1] >= horizon

    def verify(self, horizon: float, samples: int = 201, tolerance: float = 1e-10) -> Dict:
        """Check positivity, the declared Hoelder bound and mu against adaptive quadrature."""
        result = {'name': 'coefficient', 'is_valid': True, 'errors': [], 'warnings': [], 'checks': []}
        if not self.covers(horizon):
            result['errors'].append(f"table times [{self.times[0]}, {self.times[-1]}] do not cover [0, {horizon}]")
            result['is_valid'] = False
            return result

        t = np.linspace(0.0, horizon, samples)
        a = self.value(t)
        min_a = float(a.min())
        result['checks'].append({'check': 'positivity', 'min_value': min_a, 'passed': min_a > 0})
        if min_a <= 0:
            result['errors'].append(f"a(t) must be positive on [0, {horizon}], minimum {min_a:.6g}")

        dt = np.abs(t[:, None] - t[None, :])
        da = np.abs(a[:, None] - a[None, :])
        off = dt > 0
        ratio = float(np.max(da[off] / dt[off] ** self.holder_order)) if np.any(off) else 0.0
        holds = ratio <= self.holder_const * (1.0 + 1e-9) + 1e-12
        result['checks'].append({'check': 'holder_bound', 'observed': ratio, 'declared': self.holder_const, 'passed': holds})
        if not holds:
            result['errors'].append(
                f"declared Hoelder constant {self.holder_const} of order {self.holder_order} is below observed {ratio:.6g}"
            )

        worst = 0.0
        edges = np.linspace(0.0, horizon, 6)
        for lo, hi in zip(edges[:-1], edges[1:]):
            reference, _ = quad(lambda s: float(self.value(s)), lo, hi, points=self.breakpoints(lo, hi),
                                epsabs=1e-14, epsrel=1e-13, limit=200)
            closed = float(self.antiderivative(hi) - self.antiderivative(lo))
            worst = max(worst, abs(closed - reference) / max(abs(reference), 1e-300))
        result['checks'].append({'check': 'mu_quadrature', 'max_relative_error': worst, 'passed': worst <= tolerance})
        if worst > tolerance:
            result['errors'].append(f"closed-form mu disagrees with quadrature by {worst:.3e}")

        result['is_valid'] = len(result['errors']) == 0
        return result


@dataclass(frozen=True)
class MultiplierProfile:
    values: np.ndarray
    compact: bool
    mu: float


def _constant_moments(c, h, lag):
    """Moments of exp(-c (lag + u)) over u in [0, h], weighted by 1 and (h - u)."""
    c = np.asarray(c, dtype=float)
    x = c * h
    factor = np.exp(-c * lag)
    safe_c = np.where(c > 0, c, 1.0)
    m0 = np.where(x > 0, -np.expm1(-x) / safe_c, h)
    small = x < SERIES_CUTOFF
    series = h ** 2 * (0.5 - x / 6.0 + x ** 2 / 24.0 - x ** 3 / 120.0 + x ** 4 / 720.0)
    closed = (x + np.expm1(-x)) / safe_c ** 2
    m1 = np.where(small, series, closed)
    return factor * m0, factor * m1


@dataclass(frozen=True)
class EvolutionOperator:
    coefficient: CoefficientSpec
    horizon: float
    modes: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.modes < 1:
            raise InvalidInputError(f"mode count must be positive, got {self.modes}")
        if not self.coefficient.covers(self.horizon):
            raise InvalidInputError(f"coefficient table does not cover [0, {self.horizon}]")
        samples = self.coefficient.value(np.linspace(0.0, self.horizon, 257))
        if np.min(samples) <= 0:
            raise InvalidInputError("coefficient a(t) must stay positive on the horizon")

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        n = np.arange(1, self.modes + 1, dtype=float)
        return n ** 2

    @property
    def time_tolerance(self) -> float:
        return 1e-12 * max(self.horizon, 1.0)

    def _ordered(self, s: float, t: float) -> Tuple[float, float]:
        tol = self.time_tolerance
        if s < -tol or t > self.horizon + tol or t < -tol or s > self.horizon + tol:
            raise DomainError(f"times ({s}, {t}) outside [0, {self.horizon}]")
        if s > t + tol:
            raise OrderingError(f"evolution requested backwards in time: s={s} > t={t}")
        return s, max(s, t)

    def mu(self, s: float, t: float) -> float:
        s, t = self._ordered(s, t)
        if s == t:
            return 0.0
        return max(float(self.coefficient.antiderivative(t) - self.coefficient.antiderivative(s)), 0.0)

    def mu_array(self, s, t):
        """Unchecked mu for arrays of admissible (s, t)."""
        A = self.coefficient.antiderivative
        return np.maximum(A(np.asarray(t, dtype=float)) - A(np.asarray(s, dtype=float)), 0.0)

    def multipliers(self, t: float, s: float, count: Optional[int] = None) -> np.ndarray:
        """E_n(s, t) for n = 1..count."""
        n2 = self.wavenumbers if count is None else np.arange(1, count + 1, dtype=float) ** 2
        return np.exp(-n2 * self.mu(s, t))

    def apply_U(self, t: float, s: float, f: ModeVector) -> ModeVector:
        return ModeVector(self.multipliers(t, s, f.modes) * f.coeffs)

    def apply_U_adjoint(self, t: float, s: float, xs: ModeVector) -> ModeVector:
        # self-adjoint generator: same diagonal as U(t, s)
        return ModeVector(self.multipliers(t, s, xs.modes) * xs.coeffs)

    def compactness_profile(self, t: float, s: float) -> MultiplierProfile:
        mu = self.mu(s, t)
        values = np.exp(-self.wavenumbers * mu)
        values.setflags(write=False)
        return MultiplierProfile(values=values, compact=mu > 0, mu=mu)

    def decay_moments(self, k, s0: float, s1: float, t_ref: float):
        """
        int_{s0}^{s1} exp(-k mu(s, t_ref)) ds and int_{s0}^{s1} (s - s0) exp(-k mu(s, t_ref)) ds
        for every entry of k, with s0 <= s1 <= t_ref.
        """
        k = np.asarray(k, dtype=float)
        self._ordered(s0, s1)
        self._ordered(s1, t_ref)
        h = s1 - s0
        if h <= 0:
            return np.zeros_like(k), np.zeros_like(k)
        if self.coefficient.kind == "constant":
            return _constant_moments(k * self.coefficient.base, h, t_ref - s1)

        A = self.coefficient.antiderivative
        a_ref = float(A(t_ref))
        flat = k.ravel()

        def integrand(s):
            decay = np.exp(-flat * (a_ref - float(A(s))))
            return np.concatenate((decay, (s - s0) * decay))

        values, _ = quad_vec(integrand, s0, s1, epsabs=1e-15, epsrel=1e-12,
                             points=self.coefficient.breakpoints(s0, s1))
        return values[:flat.size].reshape(k.shape), values[flat.size:].reshape(k.shape)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, T] with impulse instants snapped to nodes."""

    horizon: float
    steps: int
    impulse_times: Tuple[float, ...] = ()
    snap: float = 0.5

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 2:
            raise InvalidInputError(f"time grid needs at least 2 steps, got {self.steps}")
        object.__setattr__(self, "impulse_times", tuple(float(t) for t in self.impulse_times))
        _ = self.impulse_nodes

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.horizon, self.steps + 1)
        t.setflags(write=False)
        return t

    @property
    def step(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def impulse_nodes(self) -> Tuple[int, ...]:
        nodes = []
        for k, tau in enumerate(self.impulse_times):
            key = f"impulses[{k}].time"
            if not (0.0 < tau < self.horizon):
                raise ConfigurationError(f"impulse time {tau} must lie inside (0, {self.horizon})", key=key)
            j = int(round(tau / self.step))
            if abs(tau - j * self.step) > self.snap * self.step:
                raise ConfigurationError(f"impulse time {tau} is off the solver grid by more than {self.snap} step", key=key)
            if j <= 0 or j >= self.steps:
                raise ConfigurationError(f"impulse time {tau} snaps onto the boundary node {j}", key=key)
            if nodes and j <= nodes[-1]:
                raise ConfigurationError(f"impulse time {tau} collides with the previous impulse on the grid", key=key)
            nodes.append(j)
        return tuple(nodes)

    @property
    def snapped_times(self) -> Tuple[float, ...]:
        return tuple(float(self.times[j]) for j in self.impulse_nodes)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor, self.snapped_times, self.snap)


class StepPropagators:
    """
    Per-step data for the time-stepping recursion on a TimeGrid.

    step_mult[j] = E(t_j, t_{j+1}), to_terminal[j] = E(t_j, T), and the weights
    (w0, w1) integrate E(s, t_{j+1}) against a forcing that is linear on the step.
    With an input Gramian BB^T the step-local Gramians are assembled as well.
    """

    def __init__(self, evolution: EvolutionOperator, time_grid: TimeGrid, input_gram: Optional[np.ndarray] = None):
        if abs(time_grid.horizon - evolution.horizon) > evolution.time_tolerance:
            raise DimensionError(f"time grid horizon {time_grid.horizon} differs from evolution horizon {evolution.horizon}")
        self.evolution = evolution
        self.time_grid = time_grid
        times = time_grid.times
        n2 = evolution.wavenumbers
        mu_step = evolution.mu_array(times[:-1], times[1:])
        mu_terminal = evolution.mu_array(times, np.full_like(times, evolution.horizon))
        self.step_mult = np.exp(-np.outer(mu_step, n2))
        self.to_terminal = np.exp(-np.outer(mu_terminal, n2))

        pair_k = None
        if input_gram is not None:
            input_gram = np.asarray(input_gram, dtype=float)
            if input_gram.shape != (evolution.modes, evolution.modes):
                raise DimensionError(f"input Gramian has shape {input_gram.shape}, expected {(evolution.modes,) * 2}")
            pair_k = n2[:, None] + n2[None, :]
        self.input_gram = input_gram

        self.w0, self.w1, pair_m0 = self._moments(n2, pair_k)
        self.step_gramians = None if input_gram is None else input_gram[None, :, :] * pair_m0

    def _moments(self, n2, pair_k):
        times = self.time_grid.times
        h = self.time_grid.step
        evo = self.evolution
        if evo.coefficient.kind == "constant":
            a = evo.coefficient.base
            w0, w1 = _constant_moments(np.broadcast_to(n2 * a, (times.size - 1, n2.size)), h, 0.0)
            pair_m0 = None
            if pair_k is not None:
                m0, _ = _constant_moments(pair_k * a, h, 0.0)
                pair_m0 = np.broadcast_to(m0, (times.size - 1,) + pair_k.shape)
            return np.array(w0), np.array(w1), pair_m0

        mask = None if pair_k is None else self.input_gram != 0
        ks = n2 if pair_k is None else np.unique(np.concatenate((n2, pair_k[mask])))
        steps = times.size - 1
        w0 = np.empty((steps, n2.size))
        w1 = np.empty((steps, n2.size))
        pair_m0 = None if pair_k is None else np.zeros((steps,) + pair_k.shape)
        mode_idx = np.searchsorted(ks, n2)
        pair_idx = None if pair_k is None else np.searchsorted(ks, pair_k[mask])
        for j in range(steps):
            m0, m1 = evo.decay_moments(ks, times[j], times[j + 1], times[j + 1])
            w0[j] = m0[mode_idx]
            w1[j] = m1[mode_idx]
            if pair_m0 is not None:
                pair_m0[j][mask] = m0[pair_idx]
        return w0, w1, pair_m0

    @property
    def steps(self) -> int:
        return self.time_grid.steps

    def forcing_increments(self, forcing: np.ndarray) -> np.ndarray:
        """Step contributions int E(s, t_{j+1}) f(s) ds for nodal forcing coefficients (K+1, N)."""
        forcing = np.asarray(forcing, dtype=float)
        if forcing.shape != (self.steps + 1, self.evolution.modes):
            raise DimensionError(f"forcing has shape {forcing.shape}, expected {(self.steps + 1, self.evolution.modes)}")
        slope = np.diff(forcing, axis=0) / self.time_grid.step
        return self.w0 * forcing[:-1] + self.w1 * slope

    def control_increments(self, eta: np.ndarray) -> np.ndarray:
        """Step contributions of the feedback control B B^T E(s, T) eta."""
        if self.step_gramians is None:
            raise InvalidInputError("propagators were built without an input Gramian")
        weighted = self.to_terminal[1:] * np.asarray(eta, dtype=float)[None, :]
        return np.einsum("jmn,jn->jm", self.step_gramians, weighted)

    def terminal_sum(self, increments: np.ndarray) -> np.ndarray:
        """Carry step contributions to T: sum_j E(t_{j+1}, T) * increment_j."""
        return np.sum(self.to_terminal[1:] * increments, axis=0)

    def assembled_gramian(self) -> np.ndarray:
        if self.step_gramians is None:
            raise InvalidInputError("propagators were built without an input Gramian")
        d = self.to_terminal[1:]
        psi = np.einsum("jm,jmn,jn->mn", d, self.step_gramians, d)
        return 0.5 * (psi + psi.T)


def get_evolution_operator(coefficient: CoefficientSpec, horizon: float, modes: int) -> EvolutionOperator:
    """Factory function to get an evolution operator"""
    return EvolutionOperator(coefficient, horizon, modes)
