"""Single-loop adaptive bilevel solvers.

Both variants share the same skeleton per iteration: refresh the adaptive
matrices from one-sample gradients, move x and y by damped generalized
projection steps, then refresh the direction estimates v (inner gradient) and
w (hypergradient) from a freshly drawn sample bundle. The momentum variant
mixes the fresh estimate into the running one; the variance-reduced variant
adds a correction evaluated at the previous iterate under the same samples.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import theory
from .adaptive import (
    INNER_KINDS,
    OUTER_KINDS,
    AdaptiveKind,
    AdaptiveState,
    init_state,
    update_inner_scalar,
    update_outer_matrix,
)
from .constraints import generalized_project, gradient_mapping_norm, project
from .errors import ConfigError, ContractViolation, Diverged
from .hypergrad import HypergradBatch, choose_K, expected_neumann
from .keys import derive_key, slot, subkey, uniform_index
from .oracles import ProblemOracles
from .theory import VARIANT_MOMENTUM, VARIANTS

_DIVERGE_LIMIT = 1e12
_S_XI, _S_Z0, _S_ZI = slot("xi"), slot("zeta0"), slot("zeta-i")
_S_ZV, _S_K = slot("zeta-v"), slot("k-index")
_S_AX, _S_BY, _S_OUT = slot("adapt-x"), slot("adapt-y"), slot("output")


@dataclass(frozen=True)
class SolverConfig:
    variant: str
    T: int
    seed: int
    gamma: float
    lam: float
    k: float = 1.0
    m: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    K: Optional[int] = None  # None -> bias-matched depth for the horizon T
    theta: Optional[float] = None  # None -> 1/L_g
    tau: float = 0.9
    rho: float = 0.1
    adaptive_outer: AdaptiveKind = AdaptiveKind.ADAM
    adaptive_inner: AdaptiveKind = AdaptiveKind.NORM
    b_max: Optional[float] = None
    exact_expectation: bool = False
    record_lyapunov: bool = True
    capture_path: bool = False

    @property
    def eta_exponent(self) -> float:
        return 0.5 if self.variant == VARIANT_MOMENTUM else 1.0 / 3.0

    @property
    def coef_power(self) -> int:
        return 1 if self.variant == VARIANT_MOMENTUM else 2


def validate_config(config: SolverConfig, oracles: Optional[ProblemOracles] = None) -> None:
    """Structural checks; raises ConfigError naming the offending key."""
    if config.variant not in VARIANTS:
        raise ConfigError(f"variant: unknown variant {config.variant!r}")
    if config.T < 0:
        raise ConfigError("T: iteration budget must be nonnegative")
    for name, val in (("gamma", config.gamma), ("lambda", config.lam),
                      ("k", config.k), ("m", config.m),
                      ("c1", config.c1), ("c2", config.c2), ("rho", config.rho)):
        if not val > 0:
            raise ConfigError(f"{name}: {name} must be positive")
    if config.m < 1:
        raise ConfigError("m: schedule offset must be at least 1")
    if not 0 < config.tau < 1:
        raise ConfigError("tau: averaging factor must lie in (0, 1)")
    if config.adaptive_outer not in OUTER_KINDS:
        raise ConfigError("adaptive_outer: outer matrix must be adam, adabelief or identity")
    if config.adaptive_inner not in INNER_KINDS:
        raise ConfigError("adaptive_inner: inner scalar must be norm, adabelief or identity")
    eta0, alpha1, beta1 = schedule(config, 0)
    if eta0 > 1.0:
        raise ConfigError(f"m: schedule infeasible, eta_0 = {eta0:.6g} > 1 (need m >= k^{{2 or 3}})")
    if alpha1 > 1.0:
        raise ConfigError(f"c1: schedule infeasible, alpha_1 = {alpha1:.6g} > 1")
    if beta1 > 1.0:
        raise ConfigError(f"c2: schedule infeasible, beta_1 = {beta1:.6g} > 1")
    if config.K is not None and config.K < 1:
        raise ConfigError("K: truncation depth must be at least 1")
    if oracles is not None:
        L_g = oracles.constants.L_g
        if config.theta is not None and not 0 < config.theta <= 1.0 / L_g + 1e-15:
            raise ConfigError(f"theta: must lie in (0, 1/L_g] = (0, {1.0 / L_g:.6g}]")
        if config.exact_expectation and not oracles.deterministic:
            raise ConfigError(
                "exact_expectation: requires deterministic oracles (diagnostics mode)"
            )


def schedule(config: SolverConfig, t: int) -> tuple[float, float, float]:
    """(eta_t, alpha_{t+1}, beta_{t+1}) for loop index t (valid from t = 0)."""
    eta = config.k / (config.m + t) ** config.eta_exponent
    coef = eta**config.coef_power
    return eta, config.c1 * coef, config.c2 * coef


def direction_update_momentum(prev: np.ndarray, fresh: np.ndarray, coef: float) -> np.ndarray:
    if not 0 < coef <= 1:
        raise ContractViolation("momentum coefficient must lie in (0, 1]")
    return coef * fresh + (1.0 - coef) * prev


def direction_update_storm(
    prev: np.ndarray,
    fresh_new: np.ndarray,
    fresh_old: np.ndarray,
    coef: float,
) -> np.ndarray:
    """Variance-reduced update; fresh_new/fresh_old share one sample bundle."""
    if not 0 < coef <= 1:
        raise ContractViolation("momentum coefficient must lie in (0, 1]")
    return fresh_new + (1.0 - coef) * (prev - fresh_old)


@dataclass(frozen=True)
class SolverState:
    t: int
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    v: np.ndarray
    adaptive_outer: AdaptiveState
    adaptive_inner: AdaptiveState
    keys_drawn: int = 0
    oracle_evals: int = 0


@dataclass(frozen=True)
class IterationRecord:
    t: int
    eta: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    grad_mapping_norm: Optional[float] = None
    step_norm_x: Optional[float] = None
    dist_y_star: Optional[float] = None
    metric_m: Optional[float] = None
    surrogate_error: Optional[float] = None
    objective: Optional[float] = None
    lyapunov: Optional[float] = None
    keys_drawn: int = 0
    oracle_evals: int = 0
    wall_time_ns: Optional[int] = None


@dataclass(frozen=True)
class RunResult:
    records: list[IterationRecord]
    final_state: SolverState
    uniform_index: int
    realized_b_min: float
    realized_b_max: float
    path: Optional[list[tuple[np.ndarray, np.ndarray]]] = None


def _resolve_depth(config: SolverConfig, oracles: ProblemOracles) -> tuple[int, float]:
    K = config.K if config.K is not None else choose_K(oracles.constants, max(config.T, 1))
    theta = config.theta if config.theta is not None else 1.0 / oracles.constants.L_g
    return K, theta


def _draw_batch(config: SolverConfig, t: int, K: int, theta: float) -> HypergradBatch:
    """The sample bundle the solver consumes at loop index t (public form)."""
    seed = config.seed
    zbase = derive_key(seed, t, _S_ZI)
    return HypergradBatch(
        xi=derive_key(seed, t, _S_XI),
        zeta0=derive_key(seed, t, _S_Z0),
        zetas=tuple(subkey(zbase, i) for i in range(1, K)),
        k_index=uniform_index(derive_key(seed, t, _S_K), K),
        K=K,
        theta=theta,
    )


class _BatchKeys:
    """Lazy twin of _draw_batch: derives only the k inner keys actually used."""

    __slots__ = ("xi", "zeta0", "zetas", "k_index")

    def __init__(self, config: SolverConfig, t: int, K: int):
        seed = config.seed
        self.xi = derive_key(seed, t, _S_XI)
        self.zeta0 = derive_key(seed, t, _S_Z0)
        self.k_index = uniform_index(derive_key(seed, t, _S_K), K)
        zbase = derive_key(seed, t, _S_ZI)
        self.zetas = [subkey(zbase, i) for i in range(1, self.k_index + 1)]


def _estimate_with(oracles, x, y, bk: _BatchKeys, K: int, theta: float) -> np.ndarray:
    # identical arithmetic and keys to estimate_neumann on _draw_batch output
    u = oracles.grad_f_y(x, y, bk.xi)
    for i in range(bk.k_index, 0, -1):
        u = u - theta * oracles.hvp_g_yy(x, y, u, bk.zetas[i - 1])
    u = K * theta * u
    return oracles.grad_f_x(x, y, bk.xi) - oracles.hvp_g_xy(x, y, u, bk.zeta0)


def _hypergrad_at(
    oracles: ProblemOracles,
    x: np.ndarray,
    y: np.ndarray,
    bk: _BatchKeys,
    K: int,
    theta: float,
    exact: bool,
) -> np.ndarray:
    if exact:
        return expected_neumann(oracles, x, y, theta, K)
    return _estimate_with(oracles, x, y, bk, K, theta)


def _check_finite(record: IterationRecord, *arrays: np.ndarray) -> None:
    limit_sq = _DIVERGE_LIMIT**2
    for arr in arrays:
        sq = float(arr @ arr)
        # a NaN anywhere makes the comparison false as well
        if not sq <= limit_sq:
            raise Diverged(f"iterate diverged at t={record.t}", record=record)


class _Diagnostics:
    """Per-iteration metric computation against an optional reference."""

    def __init__(self, oracles, config, reference, objective_fn, K, theta):
        self.oracles = oracles
        self.config = config
        self.reference = reference
        self.objective_fn = objective_fn or (
            reference.objective if reference is not None else None
        )
        self.K = K
        self.theta = theta
        self.L0 = math.sqrt(theory.l0_squared(oracles.constants))
        self.mu = oracles.constants.mu
        self._lyap_dc = None
        if reference is not None and config.record_lyapunov:
            self._lyap_dc = theory.DerivedConstants(
                kappa=theory.kappa(oracles.constants),
                L_y=0.0, L=0.0, L0=self.L0, L_K=0.0, L1=0.0, L2=0.0,
                mu=self.mu, K=K,
            )

    def measure(self, state: SolverState, x_tilde, A_diag, b_scal, eta, alpha, beta,
                keys_drawn, oracle_evals, started_ns) -> IterationRecord:
        cfg, ref = self.config, self.reference
        x, y, w, v = state.x, state.y, state.w, state.v
        step_norm = float(np.linalg.norm(x_tilde - x) / cfg.gamma)
        grad_map = dist = surr = metric = lyap = obj = None
        if self.objective_fn is not None:
            obj = float(self.objective_fn(x, y))
        if ref is not None:
            grad_map = gradient_mapping_norm(
                self.oracles.set_x, x, ref.grad_F(x), A_diag, cfg.gamma
            )
            dist = float(np.linalg.norm(y - ref.y_star(x)))
            surr = float(np.linalg.norm(w - ref.nabla_bar_f(x, y)))
            metric = step_norm + (math.sqrt(2.0) * surr + self.L0 * dist) / cfg.rho
            if self._lyap_dc is not None:
                pop = self.oracles.population_twin()
                err_v = float(np.linalg.norm(v - pop.grad_g_y(x, y, 0)))
                err_w = float(np.linalg.norm(
                    w - expected_neumann(pop, x, y, self.theta, self.K)
                ))
                eta_prev = schedule(cfg, state.t - 1)[0]
                lyap = theory.lyapunov(
                    cfg.variant, obj if obj is not None else 0.0, dist, err_v, err_w,
                    self._lyap_dc, b_scal, cfg.gamma, cfg.lam, cfg.rho,
                    eta_prev=eta_prev,
                )
        return IterationRecord(
            t=state.t,
            eta=eta,
            alpha=alpha,
            beta=beta,
            grad_mapping_norm=grad_map,
            step_norm_x=step_norm,
            dist_y_star=dist,
            metric_m=metric,
            surrogate_error=surr,
            objective=obj,
            lyapunov=lyap,
            keys_drawn=keys_drawn,
            oracle_evals=oracle_evals,
            wall_time_ns=time.perf_counter_ns() - started_ns,
        )


def step(
    oracles: ProblemOracles,
    config: SolverConfig,
    state: SolverState,
    reference=None,
    objective_fn: Optional[Callable] = None,
    _diag: Optional[_Diagnostics] = None,
) -> tuple[SolverState, IterationRecord]:
    """One full iteration; returns the advanced state and the trace row."""
    started = time.perf_counter_ns()
    K, theta = _resolve_depth(config, oracles)
    if _diag is None:
        validate_config(config, oracles)
        _diag = _Diagnostics(oracles, config, reference, objective_fn, K, theta)
    t = state.t
    x, y, w, v = state.x, state.y, state.w, state.v

    # adaptive matrices from fresh one-sample gradients
    gx = oracles.grad_f_x(x, y, derive_key(config.seed, t, _S_AX))
    gy = oracles.grad_g_y(x, y, derive_key(config.seed, t, _S_BY))
    ad_out, A_diag = update_outer_matrix(state.adaptive_outer, gx, w_t=w)
    ad_in, b_scal = update_inner_scalar(state.adaptive_inner, gy, v_t=v)

    eta, alpha_next, beta_next = schedule(config, t)

    x_tilde = generalized_project(oracles.set_x, x, w, A_diag, config.gamma)
    x_next = x + eta * (x_tilde - x)
    b_vec = np.full(oracles.dim_y, b_scal)
    y_tilde = generalized_project(oracles.set_y, y, v, b_vec, config.lam)
    y_next = y + eta * (y_tilde - y)

    # fresh sample bundle for the direction estimates at the new iterate
    bk = _BatchKeys(config, t + 1, K)
    zeta_v = derive_key(config.seed, t + 1, _S_ZV)
    exact = config.exact_expectation
    if config.variant == VARIANT_MOMENTUM:
        v_next = direction_update_momentum(
            v, oracles.grad_g_y(x_next, y_next, zeta_v), alpha_next
        )
        w_next = direction_update_momentum(
            w, _hypergrad_at(oracles, x_next, y_next, bk, K, theta, exact), beta_next
        )
        evals = K + 2
    else:
        v_next = direction_update_storm(
            v,
            oracles.grad_g_y(x_next, y_next, zeta_v),
            oracles.grad_g_y(x, y, zeta_v),
            alpha_next,
        )
        w_next = direction_update_storm(
            w,
            _hypergrad_at(oracles, x_next, y_next, bk, K, theta, exact),
            _hypergrad_at(oracles, x, y, bk, K, theta, exact),
            beta_next,
        )
        evals = 2 * K + 3

    new_state = SolverState(
        t=t + 1,
        x=x_next,
        y=y_next,
        w=w_next,
        v=v_next,
        adaptive_outer=ad_out,
        adaptive_inner=ad_in,
        keys_drawn=state.keys_drawn + K + 2,
        oracle_evals=state.oracle_evals + evals,
    )
    record = _diag.measure(
        state, x_tilde, A_diag, b_scal, eta, alpha_next, beta_next,
        new_state.keys_drawn, new_state.oracle_evals, started,
    )
    _check_finite(record, x_next, y_next, w_next, v_next)
    return new_state, record


def run(
    oracles: ProblemOracles,
    config: SolverConfig,
    x1: np.ndarray,
    y1: np.ndarray,
    reference=None,
    objective_fn: Optional[Callable] = None,
) -> RunResult:
    """Initialization plus T iterations; deterministic given the seed."""
    validate_config(config, oracles)
    K, theta = _resolve_depth(config, oracles)
    diag = _Diagnostics(oracles, config, reference, objective_fn, K, theta)

    started = time.perf_counter_ns()
    x1 = project(oracles.set_x, np.asarray(x1, dtype=float))
    y1 = project(oracles.set_y, np.asarray(y1, dtype=float))
    v1 = oracles.grad_g_y(x1, y1, derive_key(config.seed, 1, _S_ZV))
    w1 = _hypergrad_at(
        oracles, x1, y1, _BatchKeys(config, 1, K), K, theta, config.exact_expectation
    )
    state = SolverState(
        t=1,
        x=x1,
        y=y1,
        w=w1,
        v=v1,
        adaptive_outer=init_state(
            oracles.dim_x, config.adaptive_outer, config.tau, config.rho, config.b_max
        ),
        adaptive_inner=init_state(
            oracles.dim_y, config.adaptive_inner, config.tau, config.rho, config.b_max
        ),
        keys_drawn=K + 2,
        oracle_evals=K + 2,
    )

    init_record = IterationRecord(
        t=0,
        dist_y_star=(
            float(np.linalg.norm(y1 - reference.y_star(x1))) if reference else None
        ),
        surrogate_error=(
            float(np.linalg.norm(w1 - reference.nabla_bar_f(x1, y1))) if reference else None
        ),
        objective=(
            float(diag.objective_fn(x1, y1)) if diag.objective_fn is not None else None
        ),
        keys_drawn=state.keys_drawn,
        oracle_evals=state.oracle_evals,
        wall_time_ns=time.perf_counter_ns() - started,
    )
    records = [init_record]
    path = [(x1.copy(), y1.copy())] if config.capture_path else None
    b_seen = []

    for _ in range(config.T):
        state, record = step(oracles, config, state, reference, objective_fn, _diag=diag)
        records.append(record)
        b_seen.append(state.adaptive_inner.b + config.rho)
        if config.capture_path:
            path.append((state.x.copy(), state.y.copy()))

    out_index = (
        1 + uniform_index(derive_key(config.seed, _S_OUT), config.T) if config.T else 0
    )
    return RunResult(
        records=records,
        final_state=state,
        uniform_index=out_index,
        realized_b_min=min(b_seen) if b_seen else config.rho,
        realized_b_max=max(b_seen) if b_seen else config.rho,
        path=path,
    )


def replay_direction_estimates(
    oracles: ProblemOracles,
    path: list[tuple[np.ndarray, np.ndarray]],
    config: SolverConfig,
) -> np.ndarray:
    """Hypergradient-direction trace along a frozen iterate path.

    Replays only the w recursion (init at path[0], then one update per path
    step) under the config's seed and schedule; used to compare estimator
    variances between the two variants with the iterates held fixed.
    """
    validate_config(config)
    K, theta = _resolve_depth(config, oracles)
    x0, y0 = path[0]
    w = _estimate_with(oracles, x0, y0, _BatchKeys(config, 1, K), K, theta)
    for t in range(1, len(path)):
        x_new, y_new = path[t]
        x_old, y_old = path[t - 1]
        bk = _BatchKeys(config, t + 1, K)
        _, _, beta_next = schedule(config, t)
        fresh_new = _estimate_with(oracles, x_new, y_new, bk, K, theta)
        if config.variant == VARIANT_MOMENTUM:
            w = direction_update_momentum(w, fresh_new, beta_next)
        else:
            fresh_old = _estimate_with(oracles, x_old, y_old, bk, K, theta)
            w = direction_update_storm(w, fresh_new, fresh_old, beta_next)
    return w
