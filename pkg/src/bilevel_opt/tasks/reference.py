"""Reference inner solver for tasks without a closed-form y*(x)."""

from typing import Optional

import numpy as np

from ..constraints import project
from ..errors import ContractViolation, NumericalFailure
from ..oracles import ProblemOracles

_MAX_ITER = 10**6


def inner_solve_reference(
    oracles: ProblemOracles,
    x: np.ndarray,
    tol: float,
    y0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Full-batch gradient descent on the inner loss until ||grad_y g|| <= tol.

    Uses the population oracles and stepsize 1/L_g; strong convexity makes
    the convergence linear, so the cap is generous.
    """
    if not tol > 0:
        raise ContractViolation("tol must be positive")
    pop = oracles.population_twin()
    step = 1.0 / pop.constants.L_g
    y = np.zeros(pop.dim_y) if y0 is None else np.asarray(y0, dtype=float).copy()
    y = project(pop.set_y, y)
    for _ in range(_MAX_ITER):
        g = pop.grad_g_y(x, y, 0)
        if np.linalg.norm(g) <= tol:
            return y
        y = project(pop.set_y, y - step * g)
    raise NumericalFailure(
        f"inner reference solve did not reach tol={tol:.1e} in {_MAX_ITER} iterations"
    )
