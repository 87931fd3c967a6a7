"""Feasible sets with closed-form Euclidean projection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

# Kernel codes shared with the compiled and numpy kernels.
BALL = 0
BOX = 1


def as_point(x, dimension: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite float64 vector, optionally checking its length."""
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"point must be a 1-d vector, got shape {p.shape}")
    if dimension is not None and p.shape[0] != dimension:
        raise ValueError(
            f"dimension mismatch: point has {p.shape[0]} coordinates, domain has {dimension}"
        )
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    return p


@dataclass(frozen=True, eq=False)
class Ball:
    """Closed Euclidean ball ``{w : ||w - center|| <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = as_point(self.center)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    kind = "ball"

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    @property
    def midpoint(self) -> np.ndarray:
        return self.center.copy()

    def project(self, x) -> np.ndarray:
        x = as_point(x, self.dimension)
        diff = x - self.center
        norm = np.linalg.norm(diff)
        if norm <= self.radius:
            return x.copy()
        # shrink by ulps until the rounded result is inside, so that a second
        # projection is exactly the identity
        scale = self.radius / norm
        p = self.center + diff * scale
        while np.linalg.norm(p - self.center) > self.radius:
            scale = np.nextafter(scale, 0.0)
            p = self.center + diff * scale
        return p

    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)

    def max_norm(self) -> float:
        """Largest Euclidean norm of any point in the ball."""
        return float(np.linalg.norm(self.center)) + self.radius

    def kernel_params(self) -> tuple[int, np.ndarray, np.ndarray]:
        return BALL, self.center, np.array([self.radius])

    def to_dict(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}

    def __eq__(self, other):
        return (
            isinstance(other, Ball)
            and self.radius == other.radius
            and np.array_equal(self.center, other.center)
        )

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``{w : lower <= w <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_point(self.lower)
        hi = as_point(self.upper, lo.shape[0])
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    kind = "box"

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def project(self, x) -> np.ndarray:
        x = as_point(x, self.dimension)
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def max_norm(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def kernel_params(self) -> tuple[int, np.ndarray, np.ndarray]:
        return BOX, self.lower, self.upper

    def to_dict(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


Domain = Union[Ball, Box]


def euclidean_ball(dimension: int, radius: float = 1.0, center=None) -> Ball:
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    c = np.zeros(dimension) if center is None else center
    return Ball(np.asarray(c, dtype=np.float64), radius)


def box(lower, upper) -> Box:
    return Box(np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64))


def project(domain: Domain, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``domain``."""
    return domain.project(x)


def diameter(domain: Domain) -> float:
    return domain.diameter()


def domain_from_dict(d: dict) -> Domain:
    kind = d["kind"]
    if kind == "ball":
        return Ball(np.asarray(d["center"], dtype=np.float64), d["radius"])
    if kind == "box":
        return box(d["lower"], d["upper"])
    raise ValueError(f"unknown domain kind {kind!r}")


def project_rows(domain: Domain, X: np.ndarray) -> np.ndarray:
    """Row-wise projection of an ``(n, d)`` array."""
    if isinstance(domain, Ball):
        diff = X - domain.center
        norms = np.linalg.norm(diff, axis=1, keepdims=True)
        scale = np.where(norms > domain.radius, domain.radius / np.maximum(norms, 1e-300), 1.0)
        return np.where(norms > domain.radius, domain.center + diff * scale, X)
    return np.minimum(np.maximum(X, domain.lower), domain.upper)
