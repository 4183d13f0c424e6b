"""Shared numeric primitives: parameter vectors, convex domains, projection.

Parameters are plain 1-D float64 numpy arrays.  Block-structured parameters
(e.g. K cluster centers in R^d) are stored flattened, length K*d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

# Tolerance for algebraic identities checked in floating point.
DETERMINISTIC_TOL = 1e-9

# Relative nudge applied before integer ceilings so that quantities which are
# exact integers in real arithmetic do not round up from float noise.
_CEIL_REL_TOL = 1e-9


@dataclass(frozen=True)
class Tolerances:
    """Numeric tolerances shared across the toolkit."""

    deterministic_tol: float = DETERMINISTIC_TOL
    statistical_confidence: float = 0.95

    def __post_init__(self):
        if not self.deterministic_tol > 0:
            raise ValueError("deterministic_tol must be positive")
        if not 0 < self.statistical_confidence < 1:
            raise ValueError("statistical_confidence must lie in (0, 1)")


def as_point(x, dim: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a finite 1-D float64 vector."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D point, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point has non-finite entries")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    return arr


def distance(x, y) -> float:
    """Euclidean distance between two points of equal dimension."""
    xa = as_point(x)
    ya = as_point(y, dim=xa.shape[0])
    return float(np.linalg.norm(xa - ya))


def ceil_int(x: float) -> int:
    """Ceiling with a small downward nudge to absorb float noise at integers."""
    return math.ceil(x - _CEIL_REL_TOL * max(1.0, abs(x)))


def substream(*keys: int) -> np.random.Generator:
    """Independent, reproducible RNG stream keyed by a tuple of integers.

    Streams for distinct key tuples are statistically independent, so parallel
    tasks seeded this way give results that do not depend on scheduling order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def numeric_gradient(fn: Callable[[np.ndarray], float], theta, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    theta = as_point(theta)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        grad[j] = (fn(theta + e) - fn(theta - e)) / (2.0 * step)
    return grad


class ConvexDomain:
    """Base class for the supported convex feasible sets."""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float = DETERMINISTIC_TOL) -> bool:
        x = as_point(x, dim=self.dim)
        return distance(x, self.project(x)) <= tol

    def bounding_radius(self) -> float:
        """An upper bound on the norm of any member (may be infinite)."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a point uniformly from the domain."""
        raise NotImplementedError


def _uniform_in_ball(rng: np.random.Generator, d: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=d)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return np.zeros(d)
    r = radius * rng.uniform() ** (1.0 / d)
    return direction * (r / norm)


@dataclass(frozen=True, eq=False)
class Ball(ConvexDomain):
    """Closed Euclidean ball of positive radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius > 0:
            raise ValueError("Ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project(self, x) -> np.ndarray:
        x = as_point(x, dim=self.dim)
        offset = x - self.center
        norm = np.linalg.norm(offset)
        if norm <= self.radius:
            return x
        return self.center + offset * (self.radius / norm)

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def sample(self, rng) -> np.ndarray:
        return self.center + _uniform_in_ball(rng, self.dim, self.radius)


@dataclass(frozen=True, eq=False)
class Box(ConvexDomain):
    """Axis-aligned box with lower <= upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_point(self.lower)
        hi = as_point(self.upper, dim=lo.shape[0])
        if np.any(lo > hi):
            raise ValueError("Box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, x) -> np.ndarray:
        x = as_point(x, dim=self.dim)
        return np.clip(x, self.lower, self.upper)

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def sample(self, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class ProductOfBalls(ConvexDomain):
    """Product of ``blocks`` origin-centered balls of common radius.

    Points are flattened block-major: entry ``j*block_dim + i`` is coordinate
    ``i`` of block ``j``.  The Euclidean projection factorizes into per-block
    radial projections because the squared norm is additive over blocks.
    """

    blocks: int
    block_dim: int
    radius: float

    def __post_init__(self):
        if self.blocks < 1 or self.block_dim < 1:
            raise ValueError("blocks and block_dim must be positive integers")
        if not self.radius > 0:
            raise ValueError("ProductOfBalls radius must be positive")

    @property
    def dim(self) -> int:
        return self.blocks * self.block_dim

    def project(self, x) -> np.ndarray:
        x = as_point(x, dim=self.dim)
        blocks = x.reshape(self.blocks, self.block_dim).copy()
        norms = np.linalg.norm(blocks, axis=1)
        over = norms > self.radius
        if np.any(over):
            blocks[over] *= (self.radius / norms[over])[:, None]
        return blocks.reshape(-1)

    def bounding_radius(self) -> float:
        return self.radius * math.sqrt(self.blocks)

    def sample(self, rng) -> np.ndarray:
        out = np.concatenate(
            [_uniform_in_ball(rng, self.block_dim, self.radius) for _ in range(self.blocks)]
        )
        return out


@dataclass(frozen=True)
class WholeSpace(ConvexDomain):
    """All of R^d; projection is the identity."""

    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")

    @property
    def dim(self) -> int:
        return self.dimension

    def project(self, x) -> np.ndarray:
        return as_point(x, dim=self.dim)

    def contains(self, x, tol: float = DETERMINISTIC_TOL) -> bool:
        as_point(x, dim=self.dim)
        return True

    def bounding_radius(self) -> float:
        return math.inf

    def sample(self, rng) -> np.ndarray:
        raise ValueError("cannot sample uniformly from an unbounded domain")


def project(domain: ConvexDomain, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto the domain (identity on members)."""
    return domain.project(x)


def hoeffding_tail(n: int, epsilon: float, range_width: float) -> float:
    """Two-sided tail bound min(1, 2 exp(-2 n eps^2 / width^2)) for the mean
    of n i.i.d. draws of a variable with range ``range_width``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not range_width > 0:
        raise ValueError("range_width must be positive")
    return min(1.0, 2.0 * math.exp(-2.0 * n * epsilon**2 / range_width**2))
