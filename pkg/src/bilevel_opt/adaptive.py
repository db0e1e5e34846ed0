"""Adaptive learning-rate matrices.

The outer variable uses a diagonal matrix A = diag(sqrt(a) + rho) built from
an exponential average of squared gradients (or squared gradient-minus-
direction residuals); the inner variable uses a scalar b + rho built from an
exponential average of gradient norms. The +rho offset keeps both uniformly
positive definite, which is the only property the convergence analysis needs.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ContractViolation


class AdaptiveKind(str, Enum):
    ADAM = "adam"
    NORM = "norm"
    ADABELIEF = "adabelief"
    IDENTITY = "identity"


OUTER_KINDS = (AdaptiveKind.ADAM, AdaptiveKind.ADABELIEF, AdaptiveKind.IDENTITY)
INNER_KINDS = (AdaptiveKind.NORM, AdaptiveKind.ADABELIEF, AdaptiveKind.IDENTITY)


@dataclass(frozen=True)
class AdaptiveState:
    """Accumulators for one solver run; updates are pure (state in, state out)."""

    a: np.ndarray
    b: float
    kind: AdaptiveKind
    tau: float
    rho: float
    t: int = 0
    b_max: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ContractViolation("tau must lie in (0, 1)")
        if not self.rho > 0.0:
            raise ContractViolation("rho must be positive")
        if np.any(self.a < 0.0) or self.b < 0.0 or not np.all(np.isfinite(self.a)):
            raise ContractViolation("accumulators must be finite and nonnegative")


def init_state(
    dim: int,
    kind: AdaptiveKind,
    tau: float = 0.9,
    rho: float = 0.1,
    b_max: Optional[float] = None,
) -> AdaptiveState:
    return AdaptiveState(a=np.zeros(dim), b=0.0, kind=kind, tau=tau, rho=rho,
                         b_max=b_max)


def update_outer_matrix(
    state: AdaptiveState,
    grad_sample: np.ndarray,
    w_t: Optional[np.ndarray] = None,
) -> tuple[AdaptiveState, np.ndarray]:
    """One accumulator step; returns the new state and the diagonal of A_t.

    Every entry of the result is at least rho. The identity rule leaves the
    state untouched.
    """
    if state.kind == AdaptiveKind.NORM:
        raise ContractViolation("the norm rule produces a scalar, not an outer matrix")
    if state.kind == AdaptiveKind.IDENTITY:
        return state, np.full(state.a.shape, state.rho)
    if state.kind == AdaptiveKind.ADABELIEF:
        if w_t is None:
            raise ContractViolation("the adabelief rule needs the current direction w_t")
        centered = grad_sample - w_t
    else:
        centered = grad_sample
    a_new = state.tau * state.a + (1.0 - state.tau) * centered**2
    return replace(state, a=a_new, t=state.t + 1), np.sqrt(a_new) + state.rho


def update_inner_scalar(
    state: AdaptiveState,
    grad_sample: np.ndarray,
    v_t: Optional[np.ndarray] = None,
) -> tuple[AdaptiveState, float]:
    """One accumulator step; returns the new state and the scalar b of B_t = b I.

    The result is at least rho; an optional hard cap b_max bounds it above.
    """
    if state.kind == AdaptiveKind.ADAM:
        raise ContractViolation("the adam rule is per-coordinate; the inner matrix is scalar")
    if state.kind == AdaptiveKind.IDENTITY:
        return state, state.rho
    if state.kind == AdaptiveKind.ADABELIEF:
        if v_t is None:
            raise ContractViolation("the adabelief rule needs the current direction v_t")
        centered = grad_sample - v_t
    else:
        centered = grad_sample
    b_new = state.tau * state.b + (1.0 - state.tau) * float(np.linalg.norm(centered))
    if state.b_max is not None:
        b_new = min(b_new, state.b_max)
    return replace(state, b=b_new, t=state.t + 1), b_new + state.rho
