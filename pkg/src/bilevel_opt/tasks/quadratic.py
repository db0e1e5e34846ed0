"""Fully analytic quadratic bilevel instance.

Inner loss g(x, y) = 1/2 y'Qy - y'(Px + q) with mu I <= Q <= L_g I, outer
loss f(x, y) = 1/2 ||y - r||^2 + (c_reg / 2) ||x||^2. Everything the solvers
estimate has a closed form here: y*(x) = Q^{-1}(Px + q), the exact surrogate
hypergradient, and the true outer gradient. Stochastic oracles add bounded
zero-mean noise to the gradients and draw the inner Hessian uniformly from a
family of matrices whose mean is exactly Q, so the per-sample eigenvalue
sandwich holds draw by draw.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..constraints import Ball, Box, ConstraintSet, Unconstrained, project
from ..errors import ContractViolation
from ..keys import derive_key, slot, truncated_gaussian, uniform_index
from ..oracles import ProblemConstants, ProblemOracles

_FX, _FY, _GY, _FAM = slot("fx"), slot("fy"), slot("gy"), slot("fam")


@dataclass(frozen=True)
class QuadraticBilevel:
    Q: np.ndarray
    hessian_family: tuple[np.ndarray, ...]
    P: np.ndarray
    q: np.ndarray
    r: np.ndarray
    c_reg: float
    noise_sigma: float
    mu: float
    L_g: float
    fy_ball_radius: float
    Q_inv: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.c_reg < 0 or self.noise_sigma < 0:
            raise ContractViolation("c_reg and noise_sigma must be nonnegative")
        eig = np.linalg.eigvalsh(self.Q)
        if eig.min() < self.mu - 1e-9 or eig.max() > self.L_g + 1e-9:
            raise ContractViolation("Q violates the declared eigenvalue sandwich")
        mean = np.zeros_like(self.Q)
        for member in self.hessian_family:
            e = np.linalg.eigvalsh(member)
            if e.min() < self.mu - 1e-9 or e.max() > self.L_g + 1e-9:
                raise ContractViolation("hessian family member leaves the sandwich")
            mean += member
        mean /= len(self.hessian_family)
        if np.abs(mean - self.Q).max() > 1e-12 * max(1.0, np.abs(self.Q).max()):
            raise ContractViolation("hessian family mean must equal Q")
        object.__setattr__(self, "Q_inv", np.linalg.inv(self.Q))

    @property
    def dim_x(self) -> int:
        return self.P.shape[1]

    @property
    def dim_y(self) -> int:
        return self.Q.shape[0]

    def y_star(self, x: np.ndarray) -> np.ndarray:
        return self.Q_inv @ (self.P @ x + self.q)

    def grad_F(self, x: np.ndarray) -> np.ndarray:
        return self.c_reg * x + self.P.T @ (self.Q_inv @ (self.y_star(x) - self.r))

    def nabla_bar_f(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Exact surrogate hypergradient at any (x, y)."""
        return self.c_reg * x + self.P.T @ (self.Q_inv @ (y - self.r))

    def F_value(self, x: np.ndarray) -> float:
        d = self.y_star(x) - self.r
        return float(0.5 * d @ d + 0.5 * self.c_reg * x @ x)

    def objective(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.F_value(x)

    def constants(self) -> ProblemConstants:
        return ProblemConstants(
            L_f=max(1.0, self.c_reg),
            L_g=self.L_g,
            mu=self.mu,
            C_fy=self.fy_ball_radius,
            C_gxy=float(np.linalg.norm(self.P, 2)),
            L_gxy=0.0,
            L_gyy=0.0,
            sigma=self.noise_sigma,
        )

    def oracles(
        self,
        set_x: Optional[ConstraintSet] = None,
        set_y: Optional[ConstraintSet] = None,
        deterministic: bool = False,
    ) -> ProblemOracles:
        set_x = set_x if set_x is not None else Unconstrained(self.dim_x)
        set_y = set_y if set_y is not None else Unconstrained(self.dim_y)
        d, p = self.dim_x, self.dim_y
        sigma = 0.0 if deterministic else self.noise_sigma
        family = self.hessian_family if not deterministic else (self.Q,)
        Pt = self.P.T

        def grad_f_x(x, y, key):
            out = self.c_reg * x
            if sigma:
                out = out + truncated_gaussian(derive_key(key, _FX), d, sigma)
            return out

        def grad_f_y(x, y, key):
            out = y - self.r
            if sigma:
                out = out + truncated_gaussian(derive_key(key, _FY), p, sigma)
            return out

        def grad_g_y(x, y, key):
            out = self.Q @ y - (self.P @ x + self.q)
            if sigma:
                out = out + truncated_gaussian(derive_key(key, _GY), p, sigma)
            return out

        if len(family) == 1:
            Q0 = family[0]

            def hvp_g_yy(x, y, v, key):
                return Q0 @ v

        else:
            n_fam = len(family)

            def hvp_g_yy(x, y, v, key):
                return family[uniform_index(key ^ _FAM, n_fam)] @ v

        def hvp_g_xy(x, y, v, key):
            return -(Pt @ v)

        population = None
        if not deterministic:
            population = self.oracles(set_x, set_y, deterministic=True)
        return ProblemOracles(
            dim_x=d,
            dim_y=p,
            grad_f_x=grad_f_x,
            grad_f_y=grad_f_y,
            grad_g_y=grad_g_y,
            hvp_g_xy=hvp_g_xy,
            hvp_g_yy=hvp_g_yy,
            set_x=set_x,
            set_y=set_y,
            constants=self.constants(),
            deterministic=deterministic,
            population=population,
        )


@dataclass(frozen=True)
class TaskReference:
    """Closed-form quantities the solver logs against when available."""

    y_star: Callable[[np.ndarray], np.ndarray]
    grad_F: Callable[[np.ndarray], np.ndarray]
    nabla_bar_f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    objective: Callable[[np.ndarray, np.ndarray], float]
    x1: np.ndarray
    y1: np.ndarray
    task: object = None


def build_quadratic(
    dim_x: int,
    dim_y: int,
    mu: float,
    L_g: float,
    seed: int,
    *,
    eigenvalues: Optional[np.ndarray] = None,
    P: Optional[np.ndarray] = None,
    q: Optional[np.ndarray] = None,
    r: Optional[np.ndarray] = None,
    p_scale: float = 1.0,
    q_scale: float = 1.0,
    c_reg: float = 1.0,
    noise_sigma: float = 0.0,
    family_pairs: int = 3,
    fy_ball_radius: float = 10.0,
    x1_norm: float = 1.0,
    y1_mode: str = "ystar",
    r_at_origin_optimum: bool = True,
    set_x: Optional[ConstraintSet] = None,
    set_y: Optional[ConstraintSet] = None,
    deterministic: bool = False,
) -> tuple[ProblemOracles, TaskReference]:
    """Construct a seeded quadratic instance and its analytic reference.

    With ``r_at_origin_optimum`` the outer target r is set to y*(0), which
    places the outer optimum exactly at x = 0 (the gradient of F vanishes
    there). ``p_scale`` fixes the spectral norm of the coupling P, i.e. the
    instance's C_gxy.
    """
    if not 0 < mu <= L_g:
        raise ContractViolation("need 0 < mu <= L_g")
    rng = np.random.default_rng(seed)
    if eigenvalues is None:
        eigenvalues = np.linspace(mu, L_g, dim_y)
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if eigenvalues.shape != (dim_y,) or eigenvalues.min() < mu or eigenvalues.max() > L_g:
        raise ContractViolation("eigenvalues must be p values inside [mu, L_g]")
    V = np.linalg.qr(rng.standard_normal((dim_y, dim_y)))[0]
    Q = (V * eigenvalues) @ V.T
    Q = 0.5 * (Q + Q.T)

    members = []
    for _ in range(family_pairs):
        headroom = np.minimum(eigenvalues - mu, L_g - eigenvalues)
        delta = rng.uniform(0.0, 1.0, size=dim_y) * headroom
        up = (V * (eigenvalues + delta)) @ V.T
        dn = (V * (eigenvalues - delta)) @ V.T
        members.extend([0.5 * (up + up.T), 0.5 * (dn + dn.T)])
    if not members:
        members = [Q]

    if P is None:
        P = rng.standard_normal((dim_y, dim_x))
        sv = np.linalg.norm(P, 2)
        P = P * (p_scale / sv) if sv > 0 else P
    P = np.asarray(P, dtype=float)
    if q is None:
        q = q_scale * rng.standard_normal(dim_y)
    q = np.asarray(q, dtype=float)
    if r is None:
        if r_at_origin_optimum:
            r = np.linalg.solve(Q, q)
        else:
            r = rng.standard_normal(dim_y)
    r = np.asarray(r, dtype=float)

    task = QuadraticBilevel(
        Q=Q,
        hessian_family=tuple(members),
        P=P,
        q=q,
        r=r,
        c_reg=c_reg,
        noise_sigma=noise_sigma,
        mu=mu,
        L_g=L_g,
        fy_ball_radius=fy_ball_radius,
    )
    if noise_sigma == 0.0 and len(members) == 1:
        deterministic = True  # nothing stochastic remains
    oracles = task.oracles(set_x=set_x, set_y=set_y, deterministic=deterministic)

    direction = rng.standard_normal(dim_x)
    direction /= np.linalg.norm(direction)
    x1 = project(oracles.set_x, x1_norm * direction)
    y1 = task.y_star(x1) if y1_mode == "ystar" else np.zeros(dim_y)
    y1 = project(oracles.set_y, y1)
    if not isinstance(oracles.set_y, Unconstrained):
        # the analysis assumes the unconstrained inner optimum is feasible
        inner = task.y_star(x1)
        shrunk = _strictly_inside(oracles.set_y, inner)
        if not shrunk:
            raise ContractViolation(
                "y*(x1) must lie strictly inside the inner constraint set"
            )

    reference = TaskReference(
        y_star=task.y_star,
        grad_F=task.grad_F,
        nabla_bar_f=task.nabla_bar_f,
        objective=task.objective,
        x1=x1,
        y1=y1,
        task=task,
    )
    return oracles, reference


def _strictly_inside(cset: ConstraintSet, z: np.ndarray, margin: float = 1e-9) -> bool:
    if isinstance(cset, Unconstrained):
        return True
    if isinstance(cset, Box):
        return bool(np.all(z > cset.lower + margin) and np.all(z < cset.upper - margin))
    if isinstance(cset, Ball):
        return bool(np.linalg.norm(z - cset.center) < cset.radius - margin)
    return False
