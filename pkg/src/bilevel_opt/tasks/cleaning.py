"""Data hyper-cleaning task.

The outer variable z holds one logit weight per training row; the inner
variable theta is a binary logistic model. The inner loss reweights each
training sample by sigmoid(z_i) and adds a ridge term C ||theta||^2, so it is
2C-strongly convex; the outer loss is plain validation cross-entropy. All
five oracles are hand-derived and minibatched: batch membership is a pure
function of the sample key, and cross-Hessian products are zero outside the
drawn batch, which keeps them unbiased.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..constraints import Unconstrained
from ..errors import ContractViolation
from ..keys import derive_key, key_rng, slot
from ..oracles import ProblemConstants, ProblemOracles
from .data import Dataset

_TRAIN_BATCH = slot("train-batch")
_VAL_BATCH = slot("val-batch")


def sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u, dtype=float)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def logistic_loss(u: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(1 + e^u) - b*u, stable on both tails."""
    return np.logaddexp(0.0, u) - b * u


@dataclass(frozen=True)
class HyperCleaningTask:
    train: Dataset
    val: Dataset
    C_reg: float
    batch_size: int = 32
    corrupted_mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.C_reg > 0:
            raise ContractViolation("C_reg must be positive")
        if self.train.p != self.val.p:
            raise ContractViolation("train and validation feature widths differ")
        if not 1 <= self.batch_size:
            raise ContractViolation("batch_size must be at least 1")

    @property
    def dim_x(self) -> int:
        return self.train.n

    @property
    def dim_y(self) -> int:
        return self.train.p

    def training_loss(self, z: np.ndarray, theta: np.ndarray) -> float:
        u = self.train.features @ theta
        w = sigmoid(z)
        loss = float(np.mean(w * logistic_loss(u, self.train.labels)))
        return loss + self.C_reg * float(theta @ theta)

    def validation_loss(self, z: np.ndarray, theta: np.ndarray) -> float:
        u = self.val.features @ theta
        return float(np.mean(logistic_loss(u, self.val.labels)))

    def objective(self, z: np.ndarray, theta: np.ndarray) -> float:
        return self.validation_loss(z, theta)

    def constants(self) -> ProblemConstants:
        # crude but per-sample-safe bounds; the task is run with tuned rates,
        # so these only feed theta = 1/L_g, choose_K and diagnostics
        a_tr = np.linalg.norm(self.train.features, axis=1)
        a_val = np.linalg.norm(self.val.features, axis=1)
        amax = float(max(a_tr.max(), 1e-12))
        vmax = float(max(a_val.max(), 1e-12))
        return ProblemConstants(
            L_f=0.25 * vmax**2,
            L_g=2.0 * self.C_reg + 0.25 * amax**2,
            mu=2.0 * self.C_reg,
            C_fy=vmax,
            C_gxy=0.25 * amax,
            L_gxy=0.25 * amax**2,
            L_gyy=amax**3 / (6.0 * np.sqrt(3.0)) + 0.25 * amax**2,
            sigma=vmax,
        )

    def oracles(self, deterministic: bool = False) -> ProblemOracles:
        A, b = self.train.features, self.train.labels.astype(float)
        Av, bv = self.val.features, self.val.labels.astype(float)
        n, p = self.dim_x, self.dim_y
        C = self.C_reg
        batch = min(self.batch_size, n)
        vbatch = min(self.batch_size, self.val.n)

        def train_rows(key):
            if deterministic:
                return np.arange(n)
            rng = key_rng(derive_key(key, _TRAIN_BATCH))
            return rng.choice(n, size=batch, replace=False)

        def val_rows(key):
            if deterministic:
                return np.arange(self.val.n)
            rng = key_rng(derive_key(key, _VAL_BATCH))
            return rng.choice(self.val.n, size=vbatch, replace=False)

        def grad_f_x(z, theta, key):
            return np.zeros(n)

        def grad_f_y(z, theta, key):
            rows = val_rows(key)
            s = sigmoid(Av[rows] @ theta)
            return (s - bv[rows]) @ Av[rows] / rows.size

        def grad_g_y(z, theta, key):
            rows = train_rows(key)
            s = sigmoid(A[rows] @ theta)
            w = sigmoid(z[rows])
            return (w * (s - b[rows])) @ A[rows] / rows.size + 2.0 * C * theta

        def hvp_g_yy(z, theta, v, key):
            rows = train_rows(key)
            Ar = A[rows]
            s = sigmoid(Ar @ theta)
            w = sigmoid(z[rows])
            return (w * s * (1.0 - s) * (Ar @ v)) @ Ar / rows.size + 2.0 * C * v

        def hvp_g_xy(z, theta, v, key):
            rows = train_rows(key)
            Ar = A[rows]
            s = sigmoid(Ar @ theta)
            w = sigmoid(z[rows])
            out = np.zeros(n)
            out[rows] = w * (1.0 - w) * (s - b[rows]) * (Ar @ v) / rows.size
            return out

        population = None
        if not deterministic:
            population = self.oracles(deterministic=True)
        return ProblemOracles(
            dim_x=n,
            dim_y=p,
            grad_f_x=grad_f_x,
            grad_f_y=grad_f_y,
            grad_g_y=grad_g_y,
            hvp_g_xy=hvp_g_xy,
            hvp_g_yy=hvp_g_yy,
            set_x=Unconstrained(n),
            set_y=Unconstrained(p),
            constants=self.constants(),
            deterministic=deterministic,
            population=population,
        )


def build_hypercleaning(
    train: Dataset,
    val: Dataset,
    C_reg: float = 0.001,
    batch_size: int = 32,
    corrupted_mask: Optional[np.ndarray] = None,
    deterministic: bool = False,
) -> ProblemOracles:
    task = HyperCleaningTask(
        train=train,
        val=val,
        C_reg=C_reg,
        batch_size=batch_size,
        corrupted_mask=corrupted_mask,
    )
    return task.oracles(deterministic=deterministic)
