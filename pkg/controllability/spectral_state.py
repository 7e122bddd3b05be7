"""
States of X_p = L^p([0, pi]) on a uniform quadrature grid, their duals, the
duality mapping and the sine-basis transforms.

All value types are frozen and hold read-only arrays, so they can be shared
between worker threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .error_handler import DimensionError, InvalidInputError, ResolutionError

DEFAULT_POINTS = 513
DEFAULT_MODES = 32


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid of ``points`` nodes on [0, pi] with trapezoid weights."""

    points: int = DEFAULT_POINTS
    p: float = 2.0

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 4:
            raise InvalidInputError(f"grid needs at least 4 points, got {self.points}")
        if not (1.0 < float(self.p) < np.inf):
            raise InvalidInputError(f"exponent p must lie in (1, inf), got {self.p}")

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(np.linspace(0.0, np.pi, self.points))

    @cached_property
    def step(self) -> float:
        return np.pi / (self.points - 1)

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.points, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return _frozen(w)

    @property
    def q(self) -> float:
        return conjugate_exponent(self.p)

    def basis(self, modes: int) -> np.ndarray:
        """Matrix S with S[i, n-1] = w_n(xi_i)."""
        check_resolution(modes, self.points)
        return _sine_basis(self.points, modes)

    def with_exponent(self, p: float) -> "SpatialGrid":
        return SpatialGrid(self.points, p)


@lru_cache(maxsize=32)
def _sine_basis(points: int, modes: int) -> np.ndarray:
    xi = np.linspace(0.0, np.pi, points)
    n = np.arange(1, modes + 1)
    basis = np.sqrt(2.0 / np.pi) * np.sin(np.outer(xi, n))
    # sin(n*pi) is not exactly zero in floating point
    basis[0, :] = 0.0
    basis[-1, :] = 0.0
    basis.setflags(write=False)
    return basis


def conjugate_exponent(p: float) -> float:
    return p / (p - 1.0)


def check_resolution(modes: int, points: int) -> None:
    if modes < 1:
        raise ResolutionError(f"mode count must be positive, got {modes}")
    if 2 * modes > points:
        raise ResolutionError(f"{modes} modes cannot be resolved on {points} grid points (need N <= M/2)")


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.points,):
            raise DimensionError(f"state has shape {values.shape}, grid expects ({self.grid.points},)")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("state contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def p(self) -> float:
        return self.grid.p

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "StateVector":
        return cls(np.zeros(grid.points), grid)

    @classmethod
    def from_function(cls, func, grid: SpatialGrid) -> "StateVector":
        return cls(func(grid.nodes), grid)

    def __add__(self, other: "StateVector") -> "StateVector":
        _same_grid(self.grid, other.grid)
        return StateVector(self.values + other.values, self.grid)

    def __sub__(self, other: "StateVector") -> "StateVector":
        _same_grid(self.grid, other.grid)
        return StateVector(self.values - other.values, self.grid)

    def __mul__(self, alpha: float) -> "StateVector":
        return StateVector(alpha * self.values, self.grid)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DualVector:
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.points,):
            raise DimensionError(f"dual vector has shape {values.shape}, grid expects ({self.grid.points},)")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("dual vector contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def q(self) -> float:
        return self.grid.q


@dataclass(frozen=True)
class ModeVector:
    """Coefficients of w_1..w_N; also used for dual elements in mode form."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = _frozen(self.coeffs)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise DimensionError(f"mode vector must be a non-empty 1-d array, got shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInputError("mode vector contains non-finite coefficients")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def modes(self) -> int:
        return self.coeffs.size

    @classmethod
    def unit(cls, n: int, modes: int) -> "ModeVector":
        coeffs = np.zeros(modes)
        coeffs[n - 1] = 1.0
        return cls(coeffs)

    @classmethod
    def zeros(cls, modes: int) -> "ModeVector":
        return cls(np.zeros(modes))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def _same_grid(a: SpatialGrid, b: SpatialGrid) -> None:
    if a.points != b.points:
        raise DimensionError(f"grid mismatch: {a.points} vs {b.points} points")


# --- array kernels (rows are states) --- #


def lp_norm_values(values: np.ndarray, weights: np.ndarray, p: float) -> np.ndarray:
    return np.sum(weights * np.abs(values) ** p, axis=-1) ** (1.0 / p)


def duality_values(values: np.ndarray, weights: np.ndarray, p: float) -> np.ndarray:
    """J[x] = ||x||^(2-p) |x|^(p-2) x, applied row-wise; J[0] = 0."""
    values = np.asarray(values, dtype=float)
    if p == 2.0:
        return values.copy()
    norms = np.atleast_1d(lp_norm_values(values, weights, p))
    # |x|^(p-1) sign(x) keeps the map continuous at x = 0 for p < 2
    pointwise = np.abs(values) ** (p - 1.0) * np.sign(values)
    scale = np.zeros_like(norms)
    nonzero = norms > 0
    scale[nonzero] = norms[nonzero] ** (2.0 - p)
    if values.ndim == 1:
        return scale[0] * pointwise
    return scale[:, None] * pointwise


def duality_jacobian(values: np.ndarray, weights: np.ndarray, p: float, floor: float = 1e-8) -> np.ndarray:
    """Derivative of duality_values at a single state, as an M x M matrix."""
    values = np.asarray(values, dtype=float)
    if p == 2.0:
        return np.eye(values.size)
    norm = float(lp_norm_values(values, weights, p))
    if norm == 0.0:
        return np.zeros((values.size, values.size))
    magnitude = np.abs(values)
    if p < 2.0:
        magnitude = np.maximum(magnitude, floor * magnitude.max())
    phi = np.abs(values) ** (p - 1.0) * np.sign(values)
    diagonal = norm ** (2.0 - p) * (p - 1.0) * magnitude ** (p - 2.0)
    rank_one = (2.0 - p) * norm ** (2.0 - 2.0 * p) * np.outer(phi, weights * phi)
    return np.diag(diagonal) + rank_one


# --- public operations --- #


def lp_norm(x: StateVector) -> float:
    return float(lp_norm_values(x.values, x.grid.weights, x.grid.p))


def dual_norm(xs: DualVector) -> float:
    return float(lp_norm_values(xs.values, xs.grid.weights, xs.grid.q))


def pairing(x: StateVector, xs: DualVector) -> float:
    _same_grid(x.grid, xs.grid)
    return float(np.sum(x.grid.weights * x.values * xs.values))


def duality_map(x: StateVector) -> DualVector:
    return DualVector(duality_values(x.values, x.grid.weights, x.grid.p), x.grid)


def as_dual(x: StateVector) -> DualVector:
    """Reinterpret the values of a state as a dual element on the same grid."""
    return DualVector(x.values, x.grid)


def to_modes(x: StateVector, modes: int) -> ModeVector:
    basis = x.grid.basis(modes)
    return ModeVector(basis.T @ (x.grid.weights * x.values))


def from_modes(c: ModeVector, grid: SpatialGrid) -> StateVector:
    return StateVector(grid.basis(c.modes) @ c.coeffs, grid)


def modes_to_values(coeffs: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Row-wise from_modes for arrays of coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    return coeffs @ grid.basis(coeffs.shape[-1]).T


def values_to_modes(values: np.ndarray, grid: SpatialGrid, modes: int) -> np.ndarray:
    """Row-wise to_modes for arrays of grid values."""
    return (np.asarray(values, dtype=float) * grid.weights) @ grid.basis(modes)


def eigenfunction(n: int, grid: SpatialGrid) -> StateVector:
    return from_modes(ModeVector.unit(n, n), grid)
