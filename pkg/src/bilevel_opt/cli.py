"""Config-driven experiment runner.

Configs are flat ``key = value`` text (one pair per line, '#' comments).
Schedule and step-size keys accept ``auto``: coefficients resolve to the
theorem floors for the chosen variant, m to its feasibility floor, and
gamma/lambda to the theorem box evaluated with b_l = b_u = rho (exact for
identity inner matrices; set them explicitly or cap b via b_max otherwise).

Subcommands: run, bias-scan, check-params, report.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import theory
from .adaptive import AdaptiveKind
from .errors import ConfigError, Diverged, InfeasibleParameters
from .hypergrad import bias_bound, choose_K, expected_neumann
from .report import render_report
from .solver import SolverConfig, run, validate_config
from .tasks import build_quadratic, load_csv, split_blobs
from .tasks.cleaning import HyperCleaningTask
from .theory import VARIANT_MOMENTUM, VARIANTS
from .trace import SeedSummary, write_summary, write_trace

_AUTO = "auto"

_DEFAULTS = {
    # solver
    "variant": VARIANT_MOMENTUM,
    "task": "quadratic",
    "T": 1000,
    "seed": 1,
    "repeats": 1,
    "gamma": _AUTO,
    "lambda": _AUTO,
    "k": 1.0,
    "m": _AUTO,
    "c1": _AUTO,
    "c2": _AUTO,
    "K": _AUTO,
    "theta": _AUTO,
    "tau": 0.9,
    "rho": 0.1,
    "b_max": None,
    "adaptive_outer": "adam",
    "adaptive_inner": "norm",
    "exact_expectation": False,
    "record_lyapunov": True,
    "out": "runs",
    # quadratic task
    "d": 10,
    "p": 10,
    "mu": 1.0,
    "L_g": 10.0,
    "noise_sigma": 0.0,
    "c_reg": 1.0,
    "p_scale": 1.0,
    "q_scale": 1.0,
    "fy_ball_radius": 10.0,
    "family_pairs": 3,
    "task_seed": 0,
    "x1_norm": 1.0,
    "y1_mode": "ystar",
    # hyper-cleaning task
    "n_train": 500,
    "n_val": 500,
    "separation": 4.0,
    "corrupt_fraction": 0.6,
    "C_reg": 0.001,
    "batch_size": 32,
    "train_csv": None,
    "val_csv": None,
}

_INT_KEYS = {"T", "seed", "repeats", "K", "d", "p", "family_pairs", "task_seed",
             "n_train", "n_val", "batch_size"}
_FLOAT_KEYS = {"gamma", "lambda", "k", "m", "c1", "c2", "theta", "tau", "rho",
               "b_max", "mu", "L_g", "noise_sigma", "c_reg", "p_scale", "q_scale",
               "fy_ball_radius", "x1_norm", "separation", "corrupt_fraction", "C_reg"}
_BOOL_KEYS = {"exact_expectation", "record_lyapunov"}
_POSITIVE_KEYS = {"gamma", "lambda", "k", "m", "c1", "c2", "theta", "tau", "rho",
                  "b_max", "mu", "L_g", "c_reg", "fy_ball_radius", "C_reg"}
_AUTO_KEYS = {"gamma", "lambda", "m", "c1", "c2", "K", "theta"}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)


def parse_config(text: str) -> RunConfig:
    """Typed config with defaults filled; raises ConfigError naming the key."""
    values = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in _DEFAULTS:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        values[key] = _coerce(key, val)
    _structural_checks(values)
    return RunConfig(values=values)


def _coerce(key: str, val: str):
    if key in _AUTO_KEYS and val.lower() == _AUTO:
        return _AUTO
    if key in _BOOL_KEYS:
        if val.lower() in ("1", "true", "yes", "on"):
            return True
        if val.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {val!r}")
    if key in _INT_KEYS:
        try:
            return int(val)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {val!r}") from None
    if key in _FLOAT_KEYS:
        if key == "b_max" and val.lower() in ("none", "off"):
            return None
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {val!r}") from None
    return val


def _structural_checks(values: dict) -> None:
    if values["variant"] not in VARIANTS:
        raise ConfigError(
            f"variant must be one of {', '.join(VARIANTS)}, got {values['variant']!r}"
        )
    if values["task"] not in ("quadratic", "hypercleaning"):
        raise ConfigError(f"task must be quadratic or hypercleaning, got {values['task']!r}")
    for key in _POSITIVE_KEYS:
        v = values[key]
        if v is None or v == _AUTO:
            continue
        if not v > 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("T", "repeats", "d", "p", "n_train", "n_val", "batch_size"):
        if values[key] is not None and values[key] < (0 if key == "T" else 1):
            raise ConfigError(f"{key} must be positive")
    if values["K"] != _AUTO and values["K"] < 1:
        raise ConfigError("K must be at least 1")
    if not 0.0 <= values["corrupt_fraction"] < 1.0:
        raise ConfigError("corrupt_fraction must lie in [0, 1)")
    if values["mu"] != _AUTO and values["mu"] > values["L_g"]:
        raise ConfigError("mu must not exceed L_g")
    try:
        AdaptiveKind(values["adaptive_outer"])
        AdaptiveKind(values["adaptive_inner"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class TaskBundle:
    oracles: object
    reference: object
    objective_fn: object
    x1: np.ndarray
    y1: np.ndarray
    task: object = None
    corrupted_mask: Optional[np.ndarray] = None


def build_task(cfg: RunConfig) -> TaskBundle:
    if cfg["task"] == "quadratic":
        oracles, ref = build_quadratic(
            dim_x=cfg["d"],
            dim_y=cfg["p"],
            mu=cfg["mu"],
            L_g=cfg["L_g"],
            seed=cfg["task_seed"],
            p_scale=cfg["p_scale"],
            q_scale=cfg["q_scale"],
            c_reg=cfg["c_reg"],
            noise_sigma=cfg["noise_sigma"],
            family_pairs=cfg["family_pairs"],
            fy_ball_radius=cfg["fy_ball_radius"],
            x1_norm=cfg["x1_norm"],
            y1_mode=cfg["y1_mode"],
            deterministic=(cfg["noise_sigma"] == 0.0 and cfg["family_pairs"] == 0),
        )
        return TaskBundle(
            oracles=oracles, reference=ref, objective_fn=ref.objective,
            x1=ref.x1, y1=ref.y1, task=ref.task,
        )
    if cfg["train_csv"] is not None or cfg["val_csv"] is not None:
        if not (cfg["train_csv"] and cfg["val_csv"]):
            raise ConfigError("train_csv and val_csv must be given together")
        train = load_csv(cfg["train_csv"])
        val = load_csv(cfg["val_csv"])
        mask = None
    else:
        # one draw split into train/validation so both share a distribution
        train, val, mask = split_blobs(
            cfg["n_train"], cfg["n_val"], cfg["p"], cfg["separation"],
            cfg["corrupt_fraction"], cfg["task_seed"],
        )
    task = HyperCleaningTask(
        train=train, val=val, C_reg=cfg["C_reg"], batch_size=cfg["batch_size"],
        corrupted_mask=mask,
    )
    oracles = task.oracles()
    return TaskBundle(
        oracles=oracles, reference=None, objective_fn=task.objective,
        x1=np.zeros(task.dim_x), y1=np.zeros(task.dim_y),
        task=task, corrupted_mask=mask,
    )


def resolve_solver_config(cfg: RunConfig, bundle: TaskBundle, seed: int) -> SolverConfig:
    """Fill auto keys from the theorem box of the chosen variant."""
    constants = bundle.oracles.constants
    variant = cfg["variant"]
    T = cfg["T"]
    K = choose_K(constants, max(T, 1)) if cfg["K"] == _AUTO else cfg["K"]
    theta = 1.0 / constants.L_g if cfg["theta"] == _AUTO else cfg["theta"]

    needs_box = any(cfg[key] == _AUTO for key in ("gamma", "lambda", "m", "c1", "c2"))
    if needs_box:
        dc = theory.derived_constants(constants, K)
        rho = cfg["rho"]
        b_l = rho
        b_u = rho if cfg["b_max"] is None else cfg["b_max"] + rho
        lam_arg = None if cfg["lambda"] == _AUTO else cfg["lambda"]
        m_arg = None if cfg["m"] == _AUTO else cfg["m"]
        # floors first, then size m to host the resolved coefficients, then
        # evaluate the step-size bounds at that m
        try:
            floors = theory.theorem_parameter_box(
                dc, constants, variant, cfg["k"], m_arg, rho, b_l, b_u,
                lambda_user=lam_arg,
            )
        except InfeasibleParameters as exc:
            raise ConfigError(f"c1: {exc}") from None
        c1 = floors.c1_min if cfg["c1"] == _AUTO else cfg["c1"]
        c2 = floors.c2_min if cfg["c2"] == _AUTO else cfg["c2"]
        m = theory.m_floor(variant, cfg["k"], c1, c2) if cfg["m"] == _AUTO else cfg["m"]
        box = theory.theorem_parameter_box(
            dc, constants, variant, cfg["k"], m, rho, b_l, b_u,
            lambda_user=lam_arg,
        )
        lam = box.lambda_used if cfg["lambda"] == _AUTO else cfg["lambda"]
        gamma = box.gamma_max if cfg["gamma"] == _AUTO else cfg["gamma"]
    else:
        c1, c2, m = cfg["c1"], cfg["c2"], cfg["m"]
        lam, gamma = cfg["lambda"], cfg["gamma"]

    return SolverConfig(
        variant=variant,
        T=T,
        seed=seed,
        gamma=gamma,
        lam=lam,
        k=cfg["k"],
        m=m,
        c1=c1,
        c2=c2,
        K=K,
        theta=theta,
        tau=cfg["tau"],
        rho=cfg["rho"],
        adaptive_outer=AdaptiveKind(cfg["adaptive_outer"]),
        adaptive_inner=AdaptiveKind(cfg["adaptive_inner"]),
        b_max=cfg["b_max"],
        exact_expectation=cfg["exact_expectation"],
        record_lyapunov=cfg["record_lyapunov"],
    )


def check_theorem_box(cfg: RunConfig, bundle: TaskBundle, sc: SolverConfig) -> list[str]:
    constants = bundle.oracles.constants
    dc = theory.derived_constants(constants, sc.K)
    b_l = sc.rho
    b_u = sc.rho if sc.b_max is None else sc.b_max + sc.rho
    box = theory.theorem_parameter_box(
        dc, constants, sc.variant, sc.k, sc.m, sc.rho, b_l, b_u,
        lambda_user=sc.lam,
    )
    return box.check(sc.m, sc.c1, sc.c2, sc.gamma, sc.lam)


def _max_workers(repeats: int) -> int:
    env = os.environ.get("BILEVEL_OPT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(repeats, cap))


def run_experiment(cfg: RunConfig, out_dir: str, enforce_theory: bool = False) -> int:
    """Seeded runs to trace CSVs plus a summary; returns the exit status."""
    bundle = build_task(cfg)
    base_seed = cfg["seed"]
    repeats = cfg["repeats"]
    sc0 = resolve_solver_config(cfg, bundle, base_seed)
    validate_config(sc0, bundle.oracles)
    if enforce_theory:
        violations = check_theorem_box(cfg, bundle, sc0)
        if violations:
            raise ConfigError("theorem box violated: " + "; ".join(violations))
    os.makedirs(out_dir, exist_ok=True)

    def one_seed(seed: int) -> SeedSummary:
        sc = resolve_solver_config(cfg, bundle, seed)
        started = time.perf_counter_ns()
        try:
            result = run(
                bundle.oracles, sc, bundle.x1, bundle.y1,
                reference=bundle.reference, objective_fn=bundle.objective_fn,
            )
            status, records = "ok", result.records
        except Diverged as exc:
            result = None
            status = "diverged"
            records = [exc.record] if exc.record is not None else []
        elapsed = time.perf_counter_ns() - started
        write_trace(os.path.join(out_dir, f"trace_{seed}.csv"), records)
        return SeedSummary(seed=seed, status=status, result=result, wall_time_ns=elapsed)

    seeds = [base_seed + i for i in range(repeats)]
    with ThreadPoolExecutor(max_workers=_max_workers(repeats)) as pool:
        summaries = list(pool.map(one_seed, seeds))
    write_summary(os.path.join(out_dir, "summary.csv"), summaries)
    return 0 if all(s.status == "ok" for s in summaries) else 1


def bias_scan(cfg: RunConfig, K_list: list[int], out_dir: str) -> str:
    """Measured estimator bias against its bound, one row per depth K."""
    if cfg["task"] != "quadratic":
        raise ConfigError("bias-scan requires the quadratic task")
    if cfg["noise_sigma"] != 0.0:
        raise ConfigError("bias-scan requires a deterministic task (noise_sigma = 0)")
    bundle = build_task(cfg)
    oracles = bundle.oracles.population_twin()
    constants = oracles.constants
    theta = 1.0 / constants.L_g if cfg["theta"] == _AUTO else cfg["theta"]
    task = bundle.task

    rng = np.random.default_rng(cfg["task_seed"] + 17)
    probes = []
    for _ in range(16):
        x = rng.standard_normal(oracles.dim_x)
        y = task.r + rng.standard_normal(oracles.dim_y)
        yn = np.linalg.norm(y - task.r)
        if yn > constants.C_fy:
            y = task.r + (y - task.r) * (constants.C_fy / yn)
        probes.append((x, y))

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "bias_scan.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("K,measured_bias,bound\n")
        for K in K_list:
            # the analytic surrogate keeps the measurement floor at machine
            # precision (a CG solve would bottom out at its residual tol)
            measured = max(
                float(np.linalg.norm(
                    expected_neumann(oracles, x, y, theta, K)
                    - bundle.reference.nabla_bar_f(x, y)
                ))
                for x, y in probes
            )
            fh.write(f"{K},{measured!r},{bias_bound(constants, K)!r}\n")
    return path


def _parse_k_list(spec: str) -> list[int]:
    try:
        spec = spec.strip()
        if ".." in spec:
            lo, hi = spec.split("..", 1)
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(v) for v in spec.split(",") if v]
    except ValueError:
        raise ConfigError(f"--K expects a range like 1..20 or a comma list, got {spec!r}") from None
    if not out or min(out) < 1:
        raise ConfigError("--K values must be positive")
    return out


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bilevel-opt",
        description="Adaptive bilevel optimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute seeded runs from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--enforce-theory", action="store_true")
    p_run.add_argument("--plots", action="store_true",
                       help="render figures next to the traces")

    p_scan = sub.add_parser("bias-scan", help="estimator bias vs its bound")
    p_scan.add_argument("config")
    p_scan.add_argument("--K", required=True, help="range 1..20 or comma list")
    p_scan.add_argument("--out", default=None)

    p_check = sub.add_parser("check-params", help="validate a config against the theorem box")
    p_check.add_argument("config")

    p_report = sub.add_parser("report", help="render figures from existing traces")
    p_report.add_argument("trace_dir")
    p_report.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            for path in render_report(args.trace_dir, args.out):
                print(path)
            return 0
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
        out_dir = args.out if getattr(args, "out", None) else cfg["out"]
        if args.command == "run":
            status = run_experiment(cfg, out_dir, enforce_theory=args.enforce_theory)
            if args.plots:
                for path in render_report(out_dir):
                    print(path)
            return status
        if args.command == "bias-scan":
            print(bias_scan(cfg, _parse_k_list(args.K), out_dir))
            return 0
        # check-params
        bundle = build_task(cfg)
        sc = resolve_solver_config(cfg, bundle, cfg["seed"])
        validate_config(sc, bundle.oracles)
        violations = check_theorem_box(cfg, bundle, sc)
        if violations:
            for v in violations:
                print(f"violated: {v}")
            return 1
        print("config satisfies the theorem parameter box")
        return 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
