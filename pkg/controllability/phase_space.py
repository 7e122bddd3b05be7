"""
Phase space B_g with kernel g(theta) = exp(nu theta).

A HistorySegment samples theta -> psi(theta) on [-H, 0] with piecewise-linear
interpolation between stamps; a stamp may carry a right limit, so segments cut
out of impulsive trajectories keep their jumps. Norms integrate ||psi(theta)||
as a piecewise-linear function of theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from .error_handler import (
    ConfigurationError,
    DimensionError,
    DomainError,
    InvalidInputError,
    WindowError,
)
from .spectral_state import SpatialGrid, StateVector, lp_norm_values, modes_to_values

HISTORY_KINDS = ("zero", "constant", "mode", "table")
GAUSS_ORDER = 8


def history_window(delay: float, nu: float, tail_tolerance: float = 1e-12) -> float:
    """Window H beyond which the kernel weight drops below tail_tolerance."""
    if nu <= 0:
        raise InvalidInputError(f"kernel rate nu must be positive, got {nu}")
    return max(delay, np.log(1.0 / tail_tolerance) / nu)


@dataclass(frozen=True)
class HistorySegment:
    thetas: np.ndarray
    values: np.ndarray
    grid: SpatialGrid
    nu: float
    right_limits: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        thetas = np.array(self.thetas, dtype=float)
        values = np.array(self.values, dtype=float)
        if thetas.ndim != 1 or thetas.size < 2:
            raise DimensionError("history segment needs at least two time stamps")
        if values.shape != (thetas.size, self.grid.points):
            raise DimensionError(f"history values have shape {values.shape}, expected {(thetas.size, self.grid.points)}")
        if np.any(np.diff(thetas) <= 0):
            raise InvalidInputError("history time stamps must be strictly increasing")
        if abs(thetas[-1]) > 1e-12 * max(1.0, abs(thetas[0])):
            raise InvalidInputError(f"history must end at theta = 0, got {thetas[-1]}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("history contains non-finite values")
        if self.nu <= 0:
            raise InvalidInputError(f"kernel rate nu must be positive, got {self.nu}")
        thetas[-1] = 0.0
        limits = {}
        for idx, right in dict(self.right_limits).items():
            if not 0 <= idx < thetas.size - 1:
                raise DimensionError(f"right limit index {idx} outside the segment interior")
            right = np.array(right, dtype=float)
            right.setflags(write=False)
            limits[int(idx)] = right
        thetas.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "right_limits", limits)

    @property
    def window(self) -> float:
        return float(-self.thetas[0])

    @property
    def kernel_mass(self) -> float:
        """l = int_{-inf}^0 g = 1/nu."""
        return 1.0 / self.nu

    def _start_values(self) -> np.ndarray:
        start = np.array(self.values[:-1])
        for idx, right in self.right_limits.items():
            start[idx] = right
        return start

    @cached_property
    def stamp_norms(self):
        """(left norms at every stamp, norms at the start of every interval)"""
        p, w = self.grid.p, self.grid.weights
        return lp_norm_values(self.values, w, p), lp_norm_values(self._start_values(), w, p)

    def value_at(self, theta: float) -> StateVector:
        """Left-continuous evaluation psi(theta)."""
        if theta < self.thetas[0] - 1e-12 * max(1.0, self.window) or theta > 1e-12:
            raise WindowError(f"theta={theta} outside the history window [{-self.window}, 0]")
        theta = min(max(theta, self.thetas[0]), 0.0)
        idx = int(np.searchsorted(self.thetas, theta, side="left"))
        if idx < self.thetas.size and self.thetas[idx] == theta:
            return StateVector(self.values[idx], self.grid)
        lo = idx - 1
        start = self.right_limits.get(lo, self.values[lo])
        frac = (theta - self.thetas[lo]) / (self.thetas[lo + 1] - self.thetas[lo])
        return StateVector((1.0 - frac) * start + frac * self.values[lo + 1], self.grid)

    def scaled(self, alpha: float) -> "HistorySegment":
        limits = {i: alpha * v for i, v in self.right_limits.items()}
        return HistorySegment(self.thetas, alpha * self.values, self.grid, self.nu, limits)

    def combined(self, other: "HistorySegment") -> "HistorySegment":
        """Pointwise sum of two segments sampled on the same stamps."""
        if other.thetas.shape != self.thetas.shape or not np.allclose(other.thetas, self.thetas, rtol=0, atol=1e-12):
            raise DimensionError("segments must share their time stamps to be added")
        limits = {}
        for idx in set(self.right_limits) | set(other.right_limits):
            limits[idx] = self.right_limits.get(idx, self.values[idx]) + other.right_limits.get(idx, other.values[idx])
        return HistorySegment(self.thetas, self.values + other.values, self.grid, self.nu, limits)


def _clip_intervals(thetas, start_norms, end_norms, lower):
    """Restrict the piecewise-linear norm profile to [lower, 0]."""
    a, b = thetas[:-1], thetas[1:]
    keep = b > lower
    a, b = a[keep], b[keep]
    n_a, n_b = start_norms[keep], end_norms[keep]
    if a.size and a[0] < lower:
        frac = (lower - a[0]) / (b[0] - a[0])
        n_a = n_a.copy()
        n_a[0] = (1.0 - frac) * n_a[0] + frac * n_b[0]
        a = a.copy()
        a[0] = lower
    return a, b, n_a, n_b


def segment_norm(psi: HistorySegment, r: float) -> float:
    """int_{-r}^0 ||psi(theta)|| d theta."""
    if r < 0:
        raise InvalidInputError(f"segment length must be nonnegative, got {r}")
    if r > psi.window * (1.0 + 1e-12):
        raise WindowError(f"requested length {r} exceeds the history window {psi.window}")
    left, start = psi.stamp_norms
    a, b, n_a, n_b = _clip_intervals(psi.thetas, start, left[1:], -r)
    return float(np.sum(0.5 * (b - a) * (n_a + n_b)))


def _exponential_weights(a, b, nu):
    """Integrals of exp(nu theta) and (theta - a) exp(nu theta) over [a, b]."""
    h = b - a
    i0 = (np.exp(nu * b) - np.exp(nu * a)) / nu
    i1 = np.exp(nu * b) * (nu * h + np.expm1(-nu * h)) / nu ** 2
    return i0, i1


def bg_norm(psi: HistorySegment) -> float:
    """Exchanged form int_{-H}^0 ||psi(theta)|| exp(nu theta) / nu d theta."""
    left, start = psi.stamp_norms
    a, b = psi.thetas[:-1], psi.thetas[1:]
    i0, i1 = _exponential_weights(a, b, psi.nu)
    slope = (left[1:] - start) / (b - a)
    return float(np.sum(start * i0 + slope * i1) / psi.nu)


def bg_norm_direct(psi: HistorySegment) -> float:
    """int_{-inf}^0 g(s) ||psi||_{[s,0]} ds with psi dropped beyond the window."""
    left, start = psi.stamp_norms
    a, b = psi.thetas[:-1], psi.thetas[1:]
    h = b - a
    slope = (left[1:] - start) / h
    pieces = 0.5 * h * (start + left[1:])
    tail_from = np.concatenate((np.cumsum(pieces[::-1])[::-1][1:], [0.0]))

    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    s = 0.5 * (a[:, None] + b[:, None]) + 0.5 * h[:, None] * nodes[None, :]
    rest = b[:, None] - s
    inner = tail_from[:, None] + start[:, None] * rest + 0.5 * slope[:, None] * (h[:, None] ** 2 - (s - a[:, None]) ** 2)
    body = np.sum(0.5 * h[:, None] * weights[None, :] * np.exp(psi.nu * s) * inner)
    tail = float(np.sum(pieces)) * np.exp(-psi.nu * psi.window) / psi.nu
    return float(body + tail)


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """
    Mode coefficients of x(t_j) on the solver grid. x is left-continuous at
    impulse nodes; the right limit x(tau_k+) is stored in ``jumps``.

    The first row is the N-mode projection of phi(0), so x(0) = phi(0) holds
    only up to truncation when phi(0) does not vanish at the boundary (e.g. a
    constant history). shift_segment keeps phi(0) as the left value at
    theta = -t and the projection as its right limit.
    """

    times: np.ndarray
    coeffs: np.ndarray
    grid: SpatialGrid
    jumps: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        coeffs = np.array(self.coeffs, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise InvalidInputError("trajectory times must be strictly increasing with at least two entries")
        if coeffs.ndim != 2 or coeffs.shape[0] != times.size:
            raise DimensionError(f"trajectory coefficients have shape {coeffs.shape}, expected ({times.size}, N)")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInputError("trajectory contains non-finite coefficients")
        jumps = {}
        for node, right in dict(self.jumps).items():
            if not 0 < node < times.size - 1:
                raise DimensionError(f"jump node {node} must be interior")
            right = np.array(right, dtype=float)
            if right.shape != (coeffs.shape[1],):
                raise DimensionError(f"right limit at node {node} has shape {right.shape}")
            right.setflags(write=False)
            jumps[int(node)] = right
        times.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "jumps", jumps)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def modes(self) -> int:
        return self.coeffs.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.coeffs[-1]

    @classmethod
    def constant(cls, times, coeffs, grid: SpatialGrid) -> "PiecewiseTrajectory":
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(times, np.tile(coeffs, (len(times), 1)), grid)

    def right_coeffs(self, node: int) -> np.ndarray:
        return self.jumps.get(node, self.coeffs[node])

    def jump(self, node: int) -> np.ndarray:
        return self.right_coeffs(node) - self.coeffs[node]

    def _check_time(self, t: float) -> float:
        tol = 1e-12 * max(1.0, self.horizon)
        if t < -tol or t > self.horizon + tol:
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    def value_at(self, t: float) -> np.ndarray:
        """Left-continuous x(t) in mode coordinates."""
        t = self._check_time(t)
        j = int(np.searchsorted(self.times, t, side="left"))
        if j < self.times.size and abs(self.times[j] - t) <= 1e-12 * max(1.0, self.horizon):
            return self.coeffs[j]
        lo = j - 1
        frac = (t - self.times[lo]) / (self.times[lo + 1] - self.times[lo])
        return (1.0 - frac) * self.right_coeffs(lo) + frac * self.coeffs[lo + 1]

    def right_value_at(self, t: float) -> np.ndarray:
        t = self._check_time(t)
        j = int(np.searchsorted(self.times, t, side="left"))
        if j < self.times.size and abs(self.times[j] - t) <= 1e-12 * max(1.0, self.horizon):
            return self.right_coeffs(j)
        return self.value_at(t)

    def state_at(self, t: float) -> StateVector:
        return StateVector(modes_to_values(self.value_at(t), self.grid), self.grid)

    @cached_property
    def node_norms(self):
        """(norms at every node, norms of the stored right limits)"""
        w, p = self.grid.weights, self.grid.p
        left = lp_norm_values(modes_to_values(self.coeffs, self.grid), w, p)
        right = {node: float(lp_norm_values(modes_to_values(c, self.grid), w, p)) for node, c in self.jumps.items()}
        return left, right

    def sup_norm(self, t: Optional[float] = None) -> float:
        """sup_{0 <= s <= t} ||x(s)||; node values bound the piecewise-linear interior."""
        t = self.horizon if t is None else self._check_time(t)
        left, right = self.node_norms
        mask = self.times <= t + 1e-12 * max(1.0, self.horizon)
        best = float(np.max(left[mask]))
        for node, value in right.items():
            if self.times[node] < t:
                best = max(best, value)
        end = float(lp_norm_values(modes_to_values(self.value_at(t), self.grid), self.grid.weights, self.grid.p))
        return max(best, end)


def extended_state(x: PiecewiseTrajectory, phi: HistorySegment, s: float) -> StateVector:
    """x~(s): the history for s <= 0, the trajectory for s > 0."""
    if s <= 0:
        return phi.value_at(s)
    return x.state_at(s)


def shift_segment(x: PiecewiseTrajectory, phi: HistorySegment, t: float) -> HistorySegment:
    """Segment x_t(theta) = x~(t + theta) on the window of phi."""
    tol = 1e-12 * max(1.0, x.horizon)
    if t < -tol or t > x.horizon + tol:
        raise DomainError(f"t={t} outside [0, {x.horizon}]")
    if t <= tol:
        return phi
    t = min(t, x.horizon)
    H = phi.window
    lower = t - H

    thetas, values, limits = [], [], {}
    if lower < 0:
        keep = phi.thetas - t > -H + tol * max(1.0, H)
        # interpolated cut at -H from the history side
        cut = phi.value_at(lower).values
        thetas.append(-H)
        values.append(cut)
        for idx in np.flatnonzero(keep):
            thetas.append(phi.thetas[idx] - t)
            values.append(phi.values[idx])
            if idx in phi.right_limits:
                limits[len(thetas) - 1] = phi.right_limits[idx]
        # history meets the trajectory at theta = -t; x(0) is the projection of phi(0)
        limits[len(thetas) - 1] = modes_to_values(x.coeffs[0], x.grid)
        nodes = np.flatnonzero((x.times > 0) & (x.times < t - tol))
    else:
        nodes = np.flatnonzero((x.times > lower + tol) & (x.times < t - tol))
        thetas.append(-H)
        values.append(modes_to_values(x.right_value_at(lower), x.grid))

    for j in nodes:
        thetas.append(x.times[j] - t)
        values.append(modes_to_values(x.coeffs[j], x.grid))
        if j in x.jumps:
            limits[len(thetas) - 1] = modes_to_values(x.jumps[j], x.grid)
    thetas.append(0.0)
    values.append(modes_to_values(x.value_at(t), x.grid))
    return HistorySegment(np.array(thetas), np.array(values), phi.grid, phi.nu, limits)


def check_history_growth(x: PiecewiseTrajectory, phi: HistorySegment, t: float, tolerance: float = 1e-9) -> Dict:
    """||x_t||_Bg <= ||phi||_Bg + (t/nu) sup_{[0,t]} ||x||, both sides reported."""
    lhs = bg_norm(shift_segment(x, phi, t))
    rhs = bg_norm(phi) + phi.kernel_mass * t * x.sup_norm(t)
    return {
        't': float(t),
        'lhs': lhs,
        'rhs': rhs,
        'margin': rhs - lhs,
        'holds': lhs <= rhs + tolerance * max(1.0, rhs)
    }


def _stamps(window: float, spacing: float) -> np.ndarray:
    count = max(int(np.ceil(window / spacing)), 1) + 1
    return np.linspace(-window, 0.0, count)


def load_history_table(path, grid: SpatialGrid, nu: float, delay: float) -> HistorySegment:
    """CSV with a header row and columns theta, v_0, ..., v_{M-1}."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"history table {path} not found", key="history.file")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != grid.points + 1:
        raise ConfigurationError(
            f"history table has {data.shape[1] - 1} value columns, grid has {grid.points} points", key="history.file"
        )
    segment = HistorySegment(data[:, 0], data[:, 1:], grid, nu)
    if segment.window < delay:
        raise WindowError(f"history table covers {segment.window}, shorter than the delay {delay}")
    return segment


def build_history(kind: str, grid: SpatialGrid, nu: float, delay: float, window: float = 0.0,
                  tail_tolerance: float = 1e-12, spacing: float = 0.05, value: float = 0.0,
                  mode: int = 1, decay: float = 0.0, amplitude: float = 1.0, file=None) -> HistorySegment:
    """History catalog: zero, constant, single decaying mode, or a CSV table."""
    if kind not in HISTORY_KINDS:
        raise ConfigurationError(f"unknown history kind '{kind}', expected one of {HISTORY_KINDS}", key="history.kind")
    if kind == "table":
        return load_history_table(file, grid, nu, delay)
    H = window if window > 0 else history_window(delay, nu, tail_tolerance)
    if H < delay:
        raise WindowError(f"history window {H} shorter than the delay {delay}")
    thetas = _stamps(H, spacing)
    if kind == "zero":
        values = np.zeros((thetas.size, grid.points))
    elif kind == "constant":
        values = np.full((thetas.size, grid.points), float(value))
    else:
        shape = modes_to_values(np.eye(mode)[mode - 1], grid)
        values = amplitude * np.exp(decay * thetas)[:, None] * shape[None, :]
    return HistorySegment(thetas, values, grid, nu)
