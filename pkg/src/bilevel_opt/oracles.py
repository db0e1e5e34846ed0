"""Problem constants and the stochastic oracle bundle.

A bilevel instance is presented to the solvers as a ``ProblemOracles``: pure
functions from (x, y, key) to first-order information on the outer loss f and
inner loss g, plus Hessian-vector products of g. Nothing downstream ever
materializes a p x p matrix.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constraints import ConstraintSet
from .errors import ContractViolation
from .keys import SampleKey


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness and boundedness constants of one bilevel instance.

    The inner loss is L_g-smooth and mu-strongly convex in y for every
    sample; C_fy bounds ||grad_y f|| and C_gxy bounds the cross Hessian's
    spectral norm; L_gxy / L_gyy are the Lipschitz constants of the cross
    and inner Hessians; sigma bounds the oracle noise standard deviation.
    """

    L_f: float
    L_g: float
    mu: float
    C_fy: float
    C_gxy: float
    L_gxy: float
    L_gyy: float
    sigma: float

    def __post_init__(self):
        vals = {
            "L_f": self.L_f,
            "L_g": self.L_g,
            "mu": self.mu,
            "C_fy": self.C_fy,
            "C_gxy": self.C_gxy,
            "L_gxy": self.L_gxy,
            "L_gyy": self.L_gyy,
            "sigma": self.sigma,
        }
        for name, v in vals.items():
            if not np.isfinite(v) or v < 0:
                raise ContractViolation(f"{name} must be finite and nonnegative")
        for name in ("L_f", "L_g", "mu"):
            if vals[name] <= 0:
                raise ContractViolation(f"{name} must be strictly positive")
        if self.mu > self.L_g:
            raise ContractViolation("need 0 < mu <= L_g")


VecOracle = Callable[[np.ndarray, np.ndarray, SampleKey], np.ndarray]
HvpOracle = Callable[[np.ndarray, np.ndarray, np.ndarray, SampleKey], np.ndarray]


@dataclass(frozen=True)
class ProblemOracles:
    """Stochastic first- and second-order oracles of one bilevel instance.

    All callables are pure: the same (x, y, key) always returns the same
    array. When ``deterministic`` is set every oracle ignores its key and
    returns population quantities; ``population`` points at that twin (it is
    the bundle itself when already deterministic).
    """

    dim_x: int
    dim_y: int
    grad_f_x: VecOracle
    grad_f_y: VecOracle
    grad_g_y: VecOracle
    hvp_g_xy: HvpOracle
    hvp_g_yy: HvpOracle
    set_x: ConstraintSet
    set_y: ConstraintSet
    constants: ProblemConstants
    deterministic: bool = False
    population: Optional["ProblemOracles"] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim_x <= 0 or self.dim_y <= 0:
            raise ContractViolation("dimensions must be positive")
        if self.set_x.dim != self.dim_x or self.set_y.dim != self.dim_y:
            raise ContractViolation("constraint sets must match (dim_x, dim_y)")
        if self.deterministic and self.population is None:
            object.__setattr__(self, "population", self)

    def population_twin(self) -> "ProblemOracles":
        if self.population is None:
            raise ContractViolation(
                "stochastic oracle bundle carries no population twin"
            )
        return self.population
