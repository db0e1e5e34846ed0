"""Convex constraint sets, Euclidean and metric-weighted projections.

The solvers never touch a set directly; they go through ``project`` (plain
Euclidean projection) and ``generalized_project``, which minimizes

    <direction, x> + (1 / 2 gamma) (x - center)^T diag(metric) (x - center)

over the set. With a uniform metric the two coincide up to a step rescale,
which is the identity used by the inner variable's update.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

_BALL_TOL = 1e-12
_BALL_MAX_ITER = 200


@dataclass(frozen=True)
class Unconstrained:
    dim: int

    def contains(self, z: np.ndarray, tol: float = 0.0) -> bool:
        return z.shape == (self.dim,)


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractViolation("box bounds must be 1-d vectors of equal length")
        if np.any(lo > hi):
            raise ContractViolation("box requires lower <= upper elementwise")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, z: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(z >= self.lower - tol) and np.all(z <= self.upper + tol))


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)
        if c.ndim != 1:
            raise ContractViolation("ball center must be a 1-d vector")
        if not self.radius > 0:
            raise ContractViolation("ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, z: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.linalg.norm(z - self.center) <= self.radius + tol)


ConstraintSet = Unconstrained | Box | Ball


def _check_dim(cset: ConstraintSet, z: np.ndarray, name: str) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (cset.dim,):
        raise ContractViolation(
            f"{name} has shape {z.shape}, expected ({cset.dim},)"
        )
    return z


def project(cset: ConstraintSet, z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the set; idempotent."""
    z = _check_dim(cset, z, "z")
    if isinstance(cset, Unconstrained):
        return z.copy()
    if isinstance(cset, Box):
        return np.clip(z, cset.lower, cset.upper)
    d = z - cset.center
    n = np.linalg.norm(d)
    if n <= cset.radius:
        return z.copy()
    return cset.center + d * (cset.radius / n)


def generalized_project(
    cset: ConstraintSet,
    center: np.ndarray,
    direction: np.ndarray,
    metric_diag: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Argmin over the set of <direction, x> + (1/2 gamma) ||x - center||^2_metric.

    Unconstrained and Box solve in closed form (the objective is separable);
    Ball with a genuinely nonuniform metric falls back to bisection on the
    Lagrange multiplier of ||x - ball center|| <= r.
    """
    center = _check_dim(cset, center, "center")
    direction = _check_dim(cset, direction, "direction")
    metric_diag = _check_dim(cset, metric_diag, "metric_diag")
    if not gamma > 0:
        raise ContractViolation("gamma must be positive")
    if np.any(metric_diag <= 0):
        raise ContractViolation("metric_diag entries must be positive")

    free = center - gamma * direction / metric_diag
    if isinstance(cset, Unconstrained):
        return free
    if isinstance(cset, Box):
        return np.clip(free, cset.lower, cset.upper)

    # Ball. A uniform metric reduces to a Euclidean projection, which we keep
    # exact rather than bisected.
    if np.all(metric_diag == metric_diag[0]):
        return project(cset, free)
    if np.linalg.norm(free - cset.center) <= cset.radius:
        return free

    d = metric_diag / gamma
    c0 = cset.center

    def point(nu: float) -> np.ndarray:
        return (d * center - direction + nu * c0) / (d + nu)

    def excess(nu: float) -> float:
        return float(np.linalg.norm(point(nu) - c0)) - cset.radius

    lo, hi = 0.0, 1.0
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e30:
            raise ContractViolation("ball projection failed to bracket multiplier")
    for _ in range(_BALL_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _BALL_TOL * max(1.0, hi):
            break
    return point(hi)


def eq18_objective(
    x: np.ndarray,
    center: np.ndarray,
    direction: np.ndarray,
    metric_diag: np.ndarray,
    gamma: float,
) -> float:
    """The generalized-projection objective, for tests and grid oracles."""
    dx = x - center
    return float(direction @ x + 0.5 / gamma * (dx * metric_diag) @ dx)


def gradient_mapping_norm(
    cset: ConstraintSet,
    x: np.ndarray,
    g: np.ndarray,
    metric_diag: np.ndarray,
    gamma: float,
) -> float:
    """(1/gamma) ||x - generalized_project(set, x, g, metric, gamma)||.

    Zero exactly at points that are stationary for the constrained problem
    under the given metric.
    """
    target = generalized_project(cset, x, g, metric_diag, gamma)
    return float(np.linalg.norm(x - target) / gamma)
