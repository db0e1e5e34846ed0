"""Binary-labelled datasets: synthetic blobs, CSV loading, label corruption."""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, p)
    labels: np.ndarray  # (n,) values in {0, 1}

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(np.int64))
        if X.ndim != 2 or X.shape[0] < 1:
            raise ContractViolation("features must be a nonempty (n, p) matrix")
        if y.shape != (X.shape[0],):
            raise ContractViolation("labels must be one value per row")
        if not np.isfinite(X).all():
            raise ContractViolation("features must be finite")
        if not np.isin(y, (0, 1)).all():
            raise ContractViolation("labels must be binary (0 or 1)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]


def make_blobs(n: int, p: int, separation: float, seed: int) -> Dataset:
    """Two Gaussian clouds at +/- separation/2 along a random direction."""
    if n < 2 or p < 1:
        raise ContractViolation("need n >= 2 and p >= 1")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(p)
    direction /= np.linalg.norm(direction)
    half = n // 2
    labels = np.concatenate([np.zeros(half, dtype=int), np.ones(n - half, dtype=int)])
    centers = np.where(labels[:, None] == 0, -1.0, 1.0) * (separation / 2.0) * direction
    features = centers + rng.standard_normal((n, p))
    order = rng.permutation(n)
    return Dataset(features=features[order], labels=labels[order])


def split_blobs(
    n_train: int,
    n_val: int,
    p: int,
    separation: float,
    corrupt_fraction: float,
    seed: int,
) -> tuple[Dataset, Dataset, np.ndarray]:
    """One blob draw split into a corrupted training set and a clean validation set."""
    full = make_blobs(n_train + n_val, p, separation, seed)
    train = Dataset(features=full.features[:n_train], labels=full.labels[:n_train])
    val = Dataset(features=full.features[n_train:], labels=full.labels[n_train:])
    train, mask = corrupt_labels(train, corrupt_fraction, seed + 1)
    return train, val, mask


def corrupt_labels(
    dataset: Dataset, rho_fraction: float, seed: int
) -> tuple[Dataset, np.ndarray]:
    """Flip the labels of exactly round(rho * n) rows, chosen uniformly.

    Returns the corrupted dataset and the ground-truth boolean mask of
    flipped rows (test-only information).
    """
    if not 0.0 <= rho_fraction < 1.0:
        raise ContractViolation("corruption fraction must lie in [0, 1)")
    n = dataset.n
    n_flip = int(np.rint(rho_fraction * n))
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=n_flip, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    labels = dataset.labels.copy()
    labels[mask] = 1 - labels[mask]
    return Dataset(features=dataset.features, labels=labels), mask


def load_csv(path: str) -> Dataset:
    """Strict parser: one row per line, label first, then p feature values."""
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise ContractViolation(
                        f"{path}:{lineno}: need a label and at least one feature"
                    )
            elif len(parts) != width:
                raise ContractViolation(
                    f"{path}:{lineno}: ragged row ({len(parts)} fields, expected {width})"
                )
            try:
                values = [float(v) for v in parts]
            except ValueError as exc:
                raise ContractViolation(f"{path}:{lineno}: {exc}") from None
            if values[0] not in (0.0, 1.0):
                raise ContractViolation(
                    f"{path}:{lineno}: label must be 0 or 1, got {values[0]}"
                )
            rows.append(values)
    if not rows:
        raise ContractViolation(f"{path}: empty dataset")
    arr = np.asarray(rows)
    return Dataset(features=arr[:, 1:], labels=arr[:, 0].astype(int))
