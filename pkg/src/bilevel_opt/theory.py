"""Derived constants, theorem parameter boxes, and Lyapunov diagnostics.

Everything here is a closed-form evaluation of printed expressions; no
iteration, no estimation. The parameter boxes exist so experiment configs can
be validated (or auto-filled) against the step-size conditions under which
the convergence guarantees hold.
"""

import math
from dataclasses import dataclass
from typing import Optional

from .errors import ContractViolation, InfeasibleParameters
from .oracles import ProblemConstants

VARIANT_MOMENTUM = "biadam"
VARIANT_STORM = "vr-biadam"
VARIANTS = (VARIANT_MOMENTUM, VARIANT_STORM)


def kappa(c: ProblemConstants) -> float:
    """Lipschitz constant of x -> y*(x): ratio of the cross-Hessian bound to mu."""
    return c.C_gxy / c.mu


def lemma_smoothness(c: ProblemConstants) -> tuple[float, float]:
    """(L_y, L): surrogate tracking constant and smoothness of the outer objective."""
    tail = c.C_fy * (c.L_gxy / c.mu + c.L_gyy * c.C_gxy / c.mu**2)
    L_y = c.L_f + c.L_f * c.C_gxy / c.mu + tail
    L = c.L_f + (c.L_f + L_y) * c.C_gxy / c.mu + tail
    return L_y, L


def l0_squared(c: ProblemConstants) -> float:
    """Squared constant tying direction error to inner distance (metric weight)."""
    return 8.0 * (
        c.L_f**2
        + c.L_gxy**2 * c.C_fy**2 / c.mu**2
        + c.L_gyy**2 * c.C_gxy**2 * c.C_fy**2 / c.mu**4
        + c.L_f**2 * c.C_gxy**2 / c.mu**2
    )


def lk_squared(c: ProblemConstants, K: int) -> float:
    """Squared mean-square Lipschitz constant of the Neumann estimator."""
    if K < 1:
        raise ContractViolation("K must be at least 1")
    if c.mu == c.L_g:
        raise ContractViolation(
            "the estimator Lipschitz constant is singular at mu == L_g"
        )
    denom = 2.0 * c.mu * c.L_g - c.mu**2
    return (
        2.0 * c.L_f**2
        + 6.0 * c.C_gxy**2 * c.L_f**2 * K / denom
        + 6.0 * c.C_fy**2 * c.L_gxy**2 * K / denom
        + 6.0 * c.C_gxy**2 * c.L_f**2 * K**3 * c.L_gyy**2
        / ((c.L_g - c.mu) ** 2 * denom)
    )


def l1_squared(c: ProblemConstants) -> float:
    L0sq = l0_squared(c)
    return 12.0 * c.L_g**2 * c.mu**2 / (125.0 * L0sq) + 2.0 * L0sq / 3.0


def l2_squared(c: ProblemConstants, K: int) -> float:
    return c.L_g**2 + lk_squared(c, K)


@dataclass(frozen=True)
class DerivedConstants:
    kappa: float
    L_y: float
    L: float
    L0: float
    L_K: float
    L1: float
    L2: float
    mu: float  # carried along; the box and Lyapunov formulas need it
    K: int


def derived_constants(c: ProblemConstants, K: int) -> DerivedConstants:
    """Evaluate every derived constant at truncation depth K."""
    L_y, L = lemma_smoothness(c)
    LKsq = lk_squared(c, K)  # rejects mu == L_g
    return DerivedConstants(
        kappa=kappa(c),
        L_y=L_y,
        L=L,
        L0=math.sqrt(l0_squared(c)),
        L_K=math.sqrt(LKsq),
        L1=math.sqrt(l1_squared(c)),
        L2=math.sqrt(c.L_g**2 + LKsq),
        mu=c.mu,
        K=K,
    )


@dataclass(frozen=True)
class ParamBox:
    """Joint feasible region of (c1, c2, m, lambda, gamma) for one variant.

    gamma_max is evaluated at the caller's lambda (clipped to lambda_max),
    matching the quantifier order of the hypotheses: pick lambda first, then
    gamma.
    """

    variant: str
    k: float
    c1_min: float
    c2_min: float
    c_max: Optional[float]
    m_min: float
    lambda_max: float
    lambda_used: float
    gamma_max: float
    rho: float
    b_l: float
    b_u: float

    def check(
        self,
        m: float,
        c1: float,
        c2: float,
        gamma: float,
        lam: float,
    ) -> list[str]:
        """Names of violated conditions; empty when the config sits in the box."""
        out = []
        if c1 < self.c1_min * (1 - 1e-12):
            out.append(f"c1: need c1 >= {self.c1_min:.6g}, got {c1:.6g}")
        if c2 < self.c2_min * (1 - 1e-12):
            out.append(f"c2: need c2 >= {self.c2_min:.6g}, got {c2:.6g}")
        cap = _c_cap(self.variant, m, self.k)
        if c1 > cap * (1 + 1e-12):
            out.append(f"c1: need c1 <= {cap:.6g} (schedule cap), got {c1:.6g}")
        if c2 > cap * (1 + 1e-12):
            out.append(f"c2: need c2 <= {cap:.6g} (schedule cap), got {c2:.6g}")
        m_floor = _m_floor(self.variant, self.k, c1, c2)
        if m < m_floor * (1 - 1e-12):
            out.append(f"m: need m >= {m_floor:.6g}, got {m:.6g}")
        if lam > self.lambda_max * (1 + 1e-12):
            out.append(f"lambda: need lambda <= {self.lambda_max:.6g}, got {lam:.6g}")
        if gamma > self.gamma_max * (1 + 1e-12):
            out.append(f"gamma: need gamma <= {self.gamma_max:.6g}, got {gamma:.6g}")
        return out


def m_floor(variant: str, k: float, c1: float, c2: float) -> float:
    """Least schedule offset hosting the coefficients: keeps alpha, beta <= 1."""
    if variant == VARIANT_MOMENTUM:
        return max(k**2, (c1 * k) ** 2, (c2 * k) ** 2)
    return max(2.0, k**3, (c1 * k) ** 3, (c2 * k) ** 3)


_m_floor = m_floor


def _c_cap(variant: str, m: float, k: float) -> float:
    exp = 0.5 if variant == VARIANT_MOMENTUM else 1.0 / 3.0
    return m**exp / k


def theorem_parameter_box(
    dc: DerivedConstants,
    c: ProblemConstants,
    variant: str,
    k: float,
    m: Optional[float],
    rho: float,
    b_l: float,
    b_u: float,
    lambda_user: Optional[float] = None,
) -> ParamBox:
    """Evaluate a theorem's hypothesis list at the caller's (k, m, rho, b bounds).

    Pass m=None to size m at its floor for the minimal momentum coefficients.
    Raises when no m can reconcile the coefficient floor with the schedule cap.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}")
    if min(k, rho, b_l, b_u) <= 0 or b_u < b_l:
        raise ContractViolation("need k, rho > 0 and 0 < b_l <= b_u")
    L0sq = dc.L0**2
    mu = dc.mu
    if variant == VARIANT_MOMENTUM:
        c1_min = 125.0 * L0sq / (6.0 * mu**2)
        c2_min = 4.5
        lam_max = min(15.0 * b_l * L0sq / (4.0 * dc.L1**2 * mu), b_l / (6.0 * c.L_g))
    else:
        c1_min = 2.0 / (3.0 * k**3) + 125.0 * L0sq / (6.0 * mu**2)
        c2_min = 2.0 / (3.0 * k**3) + 4.5
        lam_max = min(15.0 * b_l * L0sq / (16.0 * dc.L2**2 * mu), b_l / (6.0 * c.L_g))

    m_floor = _m_floor(variant, k, c1_min, c2_min)
    if m is None:
        m = m_floor
    c_cap = _c_cap(variant, m, k)
    if c1_min > c_cap * (1 + 1e-9) or c2_min > c_cap * (1 + 1e-9):
        raise InfeasibleParameters(
            f"m={m:.6g} cannot host the coefficient floors: need "
            f"max(c1_min, c2_min)={max(c1_min, c2_min):.6g} <= m^(1/ex)/k={c_cap:.6g}; "
            f"binding constraint: m >= {m_floor:.6g}"
        )

    lam = lam_max if lambda_user is None else min(lambda_user, lam_max)
    kap = dc.kappa
    if variant == VARIANT_MOMENTUM:
        g1 = (
            math.sqrt(6.0) * lam * mu * rho
            / math.sqrt(6.0 * dc.L1**2 * lam**2 * mu**2 + 125.0 * b_u**2 * L0sq * kap**2)
        )
        g2 = math.sqrt(m) * rho / (4.0 * dc.L * k)
    else:
        g1 = (
            math.sqrt(6.0) * lam * mu * rho
            / (2.0 * math.sqrt(24.0 * dc.L2**2 * lam**2 * mu**2
                               + 125.0 * b_u**2 * L0sq * kap**2))
        )
        g2 = m ** (1.0 / 3.0) * rho / (4.0 * dc.L * k)

    return ParamBox(
        variant=variant,
        k=k,
        c1_min=c1_min,
        c2_min=c2_min,
        c_max=c_cap,
        m_min=m_floor,
        lambda_max=lam_max,
        lambda_used=lam,
        gamma_max=min(g1, g2),
        rho=rho,
        b_l=b_l,
        b_u=b_u,
    )


def lyapunov(
    variant: str,
    F_val: float,
    dist_y_star: float,
    err_v: float,
    err_w: float,
    dc: DerivedConstants,
    b_t: float,
    gamma: float,
    lam: float,
    rho: float,
    eta_prev: Optional[float] = None,
) -> float:
    """Potential combining outer value, inner tracking, and estimator errors.

    The variance-reduced variant divides the estimator-error bracket by the
    previous step's eta.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}")
    dist_term = 5.0 * b_t * dc.L0**2 * gamma / (lam * dc.mu * rho) * dist_y_star**2
    bracket = gamma / rho * (err_v**2 + err_w**2)
    if variant == VARIANT_STORM:
        if eta_prev is None:
            raise ContractViolation("the variance-reduced potential needs eta_prev")
        bracket /= eta_prev
    return float(F_val + dist_term + bracket)
