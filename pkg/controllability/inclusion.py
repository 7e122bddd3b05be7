"""
Interval-valued right-hand side F(t, x_t)(xi) = beta(t) [c(v) - eps, c(v) + eps]
with v = x(t - r, xi), selection policies and the Nemytskii operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .error_handler import DimensionError, InvalidInputError
from .phase_space import HistorySegment, PiecewiseTrajectory, extended_state
from .spectral_state import SpatialGrid, StateVector, lp_norm_values, values_to_modes

ENVELOPE_KINDS = ("zero", "tanh", "sine", "constant")
WEIGHT_KINDS = ("constant", "exponential", "sinusoid")
POLICY_KINDS = ("lower", "upper", "midpoint", "convex_mix", "seeded_random")


@dataclass(frozen=True)
class TimeWeight:
    """beta(t) >= 0, integrable on [0, T]."""

    kind: str = "constant"
    base: float = 1.0
    rate: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise InvalidInputError(f"unknown weight kind '{self.kind}', expected one of {WEIGHT_KINDS}")
        if self.base < 0:
            raise InvalidInputError(f"weight base must be nonnegative, got {self.base}")
        if self.kind == "exponential" and self.rate < 0:
            raise InvalidInputError(f"weight rate must be nonnegative, got {self.rate}")
        if self.kind == "sinusoid" and abs(self.amplitude) > self.base:
            raise InvalidInputError("sinusoid weight needs |amplitude| <= base to stay nonnegative")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.base)
        if self.kind == "exponential":
            return self.base * np.exp(-self.rate * t)
        return self.base + self.amplitude * np.sin(self.frequency * t)

    def l1_norm(self, horizon: float) -> float:
        if self.kind == "constant":
            return self.base * horizon
        if self.kind == "exponential":
            if self.rate == 0:
                return self.base * horizon
            return self.base * -np.expm1(-self.rate * horizon) / self.rate
        if self.frequency == 0:
            return self.base * horizon
        return self.base * horizon + self.amplitude * (1.0 - np.cos(self.frequency * horizon)) / self.frequency


@dataclass(frozen=True)
class InclusionSpec:
    envelope: str = "zero"
    epsilon: float = 0.0
    level: float = 0.0
    delay: float = 0.5
    weight: TimeWeight = field(default_factory=TimeWeight)

    def __post_init__(self):
        if self.envelope not in ENVELOPE_KINDS:
            raise InvalidInputError(f"unknown envelope '{self.envelope}', expected one of {ENVELOPE_KINDS}")
        if self.epsilon < 0:
            raise InvalidInputError(f"envelope half-width must be nonnegative, got {self.epsilon}")
        if not self.delay > 0:
            raise InvalidInputError(f"delay must be positive, got {self.delay}")

    def center(self, v):
        v = np.asarray(v, dtype=float)
        if self.envelope == "zero":
            return np.zeros_like(v)
        if self.envelope == "tanh":
            return np.tanh(v)
        if self.envelope == "sine":
            return np.sin(v)
        return np.full_like(v, self.level)

    @property
    def envelope_sup(self) -> float:
        """sup_v max(|l(v)|, |u(v)|) before the time weight."""
        if self.envelope == "zero":
            return self.epsilon
        if self.envelope == "constant":
            return abs(self.level) + self.epsilon
        return 1.0 + self.epsilon

    @property
    def is_trivial(self) -> bool:
        return self.envelope_sup == 0.0 or (self.weight.base == 0.0 and self.weight.amplitude == 0.0)

    def gamma(self, t, p: float):
        """Bound gamma(t) on sup_{z in F(t, psi)} ||z||_p."""
        return self.weight.value(t) * self.envelope_sup * np.pi ** (1.0 / p)

    def gamma_l1(self, horizon: float, p: float) -> float:
        return self.weight.l1_norm(horizon) * self.envelope_sup * np.pi ** (1.0 / p)

    def integral_bound(self, t, p: float):
        """Bound on int |z(xi)|^p d xi for z in F(t, psi)."""
        return (self.weight.value(t) * self.envelope_sup) ** p * np.pi


@dataclass(frozen=True)
class IntervalField:
    lo: StateVector
    hi: StateVector

    def __post_init__(self):
        if self.lo.grid.points != self.hi.grid.points:
            raise DimensionError("interval endpoints live on different grids")
        if np.any(self.lo.values > self.hi.values):
            raise InvalidInputError("interval field has lo > hi")

    def contains(self, z: StateVector, tolerance: float = 0.0) -> bool:
        return bool(np.all(z.values >= self.lo.values - tolerance) and np.all(z.values <= self.hi.values + tolerance))


def _interval_values(t, v, spec: InclusionSpec):
    c = spec.center(v)
    beta = float(spec.weight.value(t))
    return beta * (c - spec.epsilon), beta * (c + spec.epsilon)


def evaluate_F_delayed(t: float, v: StateVector, spec: InclusionSpec) -> IntervalField:
    """F from the delayed value v = psi(-r), the only part of the segment it reads."""
    lo, hi = _interval_values(t, v.values, spec)
    return IntervalField(StateVector(lo, v.grid), StateVector(hi, v.grid))


def evaluate_F(t: float, psi: HistorySegment, spec: InclusionSpec) -> IntervalField:
    return evaluate_F_delayed(t, psi.value_at(-spec.delay), spec)


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str = "midpoint"
    mix: float = 0.5
    mix_amplitude: float = 0.0
    mix_frequency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidInputError(f"unknown selection policy '{self.kind}', expected one of {POLICY_KINDS}")
        if not (0.0 <= self.mix <= 1.0):
            raise InvalidInputError(f"mix must lie in [0, 1], got {self.mix}")

    def alpha(self, t: float, index: int = 0) -> float:
        """Convex coefficient of the upper endpoint at time t (grid index ``index``)."""
        if self.kind == "lower":
            return 0.0
        if self.kind == "upper":
            return 1.0
        if self.kind == "midpoint":
            return 0.5
        if self.kind == "convex_mix":
            return float(np.clip(self.mix + self.mix_amplitude * np.sin(self.mix_frequency * t), 0.0, 1.0))
        # one generator per (seed, index): reproducible under any evaluation order
        return float(np.random.default_rng([self.seed, index]).uniform())


def select(field: IntervalField, policy: SelectionPolicy, t: float = 0.0, index: int = 0) -> StateVector:
    alpha = policy.alpha(t, index)
    return StateVector((1.0 - alpha) * field.lo.values + alpha * field.hi.values, field.lo.grid)


@dataclass(frozen=True)
class SelectionPath:
    """Selection f(t_j) sampled on the solver grid."""

    times: np.ndarray
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        times = np.array(self.times, dtype=float)
        if values.shape != (times.size, self.grid.points):
            raise DimensionError(f"selection has shape {values.shape}, expected {(times.size, self.grid.points)}")
        values.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)

    @classmethod
    def zeros(cls, times, grid: SpatialGrid) -> "SelectionPath":
        return cls(times, np.zeros((len(times), grid.points)), grid)

    def modes(self, count: int) -> np.ndarray:
        return values_to_modes(self.values, self.grid, count)

    def norms(self) -> np.ndarray:
        return lp_norm_values(self.values, self.grid.weights, self.grid.p)

    def is_zero(self) -> bool:
        return not np.any(self.values)


def selection_at(t: float, index: int, delayed: StateVector, spec: InclusionSpec, policy: SelectionPolicy) -> np.ndarray:
    return select(evaluate_F_delayed(t, delayed, spec), policy, t, index).values


def nemytskii(x: PiecewiseTrajectory, phi: HistorySegment, spec: InclusionSpec, policy: SelectionPolicy,
              times: Optional[np.ndarray] = None) -> SelectionPath:
    """Selection f(t_j) in F(t_j, x~_{t_j}) along the trajectory x."""
    times = x.times if times is None else np.asarray(times, dtype=float)
    if spec.is_trivial:
        return SelectionPath.zeros(times, phi.grid)
    values = np.empty((times.size, phi.grid.points))
    for j, t in enumerate(times):
        delayed = extended_state(x, phi, t - spec.delay)
        values[j] = selection_at(t, j, delayed, spec, policy)
    return SelectionPath(times, values, phi.grid)
