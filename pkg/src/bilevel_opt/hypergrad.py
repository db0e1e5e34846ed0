"""Hypergradient estimators.

The surrogate hypergradient of the outer objective is

    grad_x f(x, y) - H_xy(x, y) [H_yy(x, y)]^-1 grad_y f(x, y),

and the single-sample estimator replaces the inverse inner Hessian by a
randomly truncated Neumann series: draw k uniform in {0, ..., K-1} and apply

    K * theta * prod_{i=1..k} (I - theta * H_yy(.; zeta_i))

to grad_y f, right to left, so the cost is k Hessian-vector products and the
bias against the exact surrogate decays like (1 - mu/L_g)^K.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericalFailure
from .keys import SampleKey
from .oracles import ProblemConstants, ProblemOracles


@dataclass(frozen=True)
class HypergradBatch:
    """One sample bundle for the randomized Neumann estimator.

    ``zetas`` holds the K-1 inner-Hessian keys; ``zeta0`` feeds the cross
    Hessian; ``k_index`` is the uniform truncation index, drawn independently
    of the sample keys.
    """

    xi: SampleKey
    zeta0: SampleKey
    zetas: tuple[SampleKey, ...]
    k_index: int
    K: int
    theta: float

    def validate(self, L_g: float) -> "HypergradBatch":
        if self.K < 1:
            raise ContractViolation("K must be at least 1")
        if len(self.zetas) != self.K - 1:
            raise ContractViolation("need exactly K-1 inner-Hessian keys")
        if not 0 <= self.k_index <= self.K - 1:
            raise ContractViolation("k_index must lie in {0, ..., K-1}")
        if not 0 < self.theta <= 1.0 / L_g + 1e-15:
            raise ContractViolation("theta must lie in (0, 1/L_g]")
        return self


def estimate_neumann(
    oracles: ProblemOracles,
    x: np.ndarray,
    y: np.ndarray,
    batch: HypergradBatch,
) -> np.ndarray:
    """Single-sample Neumann hypergradient estimate at (x, y)."""
    batch.validate(oracles.constants.L_g)
    u = oracles.grad_f_y(x, y, batch.xi)
    # product applied right to left with fresh keys, never forming a matrix
    for i in range(batch.k_index, 0, -1):
        u = u - batch.theta * oracles.hvp_g_yy(x, y, u, batch.zetas[i - 1])
    u = batch.K * batch.theta * u
    return oracles.grad_f_x(x, y, batch.xi) - oracles.hvp_g_xy(x, y, u, batch.zeta0)


def expected_neumann(
    oracles: ProblemOracles,
    x: np.ndarray,
    y: np.ndarray,
    theta: float,
    K: int,
) -> np.ndarray:
    """Exact expectation over the truncation index, for deterministic oracles.

    Equals grad_x f - H_xy [theta * sum_{k<K} (I - theta H_yy)^k] grad_y f and
    coincides with the mean of ``estimate_neumann`` over all K index values.
    """
    if not oracles.deterministic:
        raise ContractViolation(
            "expected_neumann is only defined against deterministic oracles"
        )
    if K < 1:
        raise ContractViolation("K must be at least 1")
    if not 0 < theta <= 1.0 / oracles.constants.L_g + 1e-15:
        raise ContractViolation("theta must lie in (0, 1/L_g]")
    key = 0
    u = oracles.grad_f_y(x, y, key)
    acc = u.copy()
    for _ in range(K - 1):
        u = u - theta * oracles.hvp_g_yy(x, y, u, key)
        acc += u
    acc *= theta
    return oracles.grad_f_x(x, y, key) - oracles.hvp_g_xy(x, y, acc, key)


def exact_hypergradient(
    oracles: ProblemOracles,
    x: np.ndarray,
    y: np.ndarray,
    residual_tol: float = 1e-10,
) -> np.ndarray:
    """Surrogate hypergradient with the inner system solved to high accuracy.

    Solves H_yy z = grad_y f by conjugate gradient on Hessian-vector products;
    at y = y*(x) the result equals the true gradient of the outer objective.
    """
    if not oracles.deterministic:
        raise ContractViolation(
            "exact_hypergradient requires deterministic oracles"
        )
    key = 0
    b = oracles.grad_f_y(x, y, key)
    z = _cg_solve(lambda v: oracles.hvp_g_yy(x, y, v, key), b,
                  tol=residual_tol, max_iter=10 * oracles.dim_y)
    return oracles.grad_f_x(x, y, key) - oracles.hvp_g_xy(x, y, z, key)


def _cg_solve(apply_A, b: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    z = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    if math.sqrt(rs) <= tol:
        return z
    for _ in range(max_iter):
        Ap = apply_A(p)
        alpha = rs / float(p @ Ap)
        z += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= tol:
            return z
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise NumericalFailure(
        f"conjugate gradient stalled: residual {math.sqrt(rs):.3e} after "
        f"{max_iter} iterations (tol {tol:.1e})"
    )


def bias_bound(constants: ProblemConstants, K: int) -> float:
    """Upper bound on the estimator's expectation gap to the exact surrogate.

    (C_gxy * C_fy / mu) * (1 - mu/L_g)^K; monotone nonincreasing in K.
    """
    if K < 1:
        raise ContractViolation("K must be at least 1")
    base = 1.0 - constants.mu / constants.L_g
    return constants.C_gxy * constants.C_fy / constants.mu * base**K


def choose_K(constants: ProblemConstants, T: float) -> int:
    """Truncation depth making the bias at most 1/T over a T-iteration run."""
    if T < 1:
        raise ContractViolation("T must be at least 1")
    arg = constants.C_gxy * constants.C_fy * T / constants.mu
    if arg <= 1.0:
        return 1
    return max(1, math.ceil(constants.L_g / constants.mu * math.log(arg)))
