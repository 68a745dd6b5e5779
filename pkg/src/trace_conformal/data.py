"""Synthetic benchmark data, CSV ingestion, normalization, and splits.

The synthetic family crosses two structured noise distributions (a spiral
arc and a six-arm pinwheel mixture) with two conditioning regimes: a
low-dimensional regime with two informative covariates, and a
higher-dimensional regime that appends five nuisance covariates and scales
the mean function.  Targets are stored normalized to zero mean and unit
variance per dimension; the recorded statistics let downstream consumers
map volumes and predictions back to the original scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError, SchemaError

DATASET_FORMAT = "trace-dataset-v1"

SPIRAL_ETA_STD = (0.2, 0.1)
PINWHEEL_ARMS = 6
PINWHEEL_RADIUS = 3.0
PINWHEEL_ECC = 0.16


@dataclass(frozen=True)
class SyntheticConfig:
    """Which synthetic dataset to draw: noise family x conditioning regime."""

    noise_kind: str  # "spiral" or "pinwheel"
    regime: str  # "L" (2 covariates, k=1) or "H" (7 covariates, k=5)
    n: int
    seed: int

    def __post_init__(self):
        if self.noise_kind not in ("spiral", "pinwheel"):
            raise InvalidArgumentError(f"unknown noise_kind {self.noise_kind!r}")
        if self.regime not in ("L", "H"):
            raise InvalidArgumentError(f"unknown regime {self.regime!r}")
        if self.n < 1:
            raise InvalidArgumentError(f"n must be >= 1, got {self.n}")

    @property
    def x_dim(self) -> int:
        return 2 if self.regime == "L" else 7

    @property
    def k_scale(self) -> int:
        return 1 if self.regime == "L" else 5

    @property
    def name(self) -> str:
        return f"{self.noise_kind}_{self.regime}"


@dataclass
class Dataset:
    """Covariates, normalized targets, and the statistics to undo it."""

    x: np.ndarray
    y: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise InvalidArgumentError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            x=self.x[idx],
            y=self.y[idx],
            y_mean=self.y_mean,
            y_std=self.y_std,
            provenance=dict(self.provenance),
        )

    def denormalize(self, y_normalized: np.ndarray) -> np.ndarray:
        return np.asarray(y_normalized) * self.y_std + self.y_mean


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    cal: np.ndarray
    test: np.ndarray
    fractions: tuple
    seed: int


def mean_fn(x1, x2) -> np.ndarray:
    """Polynomial mean surface shared by all synthetic datasets.

    Component 1: 2 x1^3 - 3 x2^2 + 5 x2 + x1 x2
    Component 2: x1^2 x2 - 4 x2^2 + 3 x1^2 x2 + 7
    Accepts scalars or equal-length arrays; returns shape (..., 2).
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    f1 = 2.0 * x1**3 - 3.0 * x2**2 + 5.0 * x2 + x1 * x2
    f2 = x1**2 * x2 - 4.0 * x2**2 + 3.0 * x1**2 * x2 + 7.0
    return np.stack([f1, f2], axis=-1)


def spiral_noise(seed: int, n: int) -> np.ndarray:
    """Noise along a spiral arc: (theta cos theta + eta1, theta sin theta + eta2).

    theta ~ Uniform(0, 2 pi); eta1 ~ N(0, 0.2^2), eta2 ~ N(0, 0.1^2).
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    eta1 = rng.normal(0.0, SPIRAL_ETA_STD[0], size=n)
    eta2 = rng.normal(0.0, SPIRAL_ETA_STD[1], size=n)
    return np.stack([theta * np.cos(theta) + eta1, theta * np.sin(theta) + eta2], axis=1)


def pinwheel_component_params(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of pinwheel arm k (0..5)."""
    theta = 2.0 * np.pi * k / PINWHEEL_ARMS
    mu = PINWHEEL_RADIUS * np.array([np.cos(theta), np.sin(theta)])
    q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    cov = q @ np.diag([1.0, PINWHEEL_ECC**2]) @ q.T
    return mu, cov


def pinwheel_noise(seed: int, n: int, return_components: bool = False):
    """Six-arm Gaussian pinwheel mixture with equal weights.

    Arm k has mean 3 (cos theta_k, sin theta_k) and covariance
    Q_k diag(1, 0.16^2) Q_k^T, the unit-variance axis pointing along the
    arm direction theta_k = 2 pi k / 6.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    comp = rng.integers(0, PINWHEEL_ARMS, size=n)
    z = rng.standard_normal((n, 2))
    out = np.empty((n, 2))
    for k in range(PINWHEEL_ARMS):
        mask = comp == k
        if not np.any(mask):
            continue
        theta = 2.0 * np.pi * k / PINWHEEL_ARMS
        q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        a = q @ np.diag([1.0, PINWHEEL_ECC])
        mu, _ = pinwheel_component_params(k)
        out[mask] = mu + z[mask] @ a.T
    if return_components:
        return out, comp
    return out


def normalize_targets(y_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale each column by its population (denominator n) std."""
    y_raw = np.asarray(y_raw, dtype=float)
    y_mean = y_raw.mean(axis=0)
    y_std = y_raw.std(axis=0)
    if np.any(y_std == 0.0):
        bad = int(np.flatnonzero(y_std == 0.0)[0])
        raise InvalidArgumentError(f"target column {bad} is constant; cannot normalize")
    return (y_raw - y_mean) / y_std, y_mean, y_std


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Draw a synthetic dataset: Y = k * f(x1, x2) + noise, then normalize Y.

    Covariates are N((-2, -1.5), I_2) in regime L and N(0, I_7) in regime H;
    only the first two covariates enter the mean, the rest are nuisance.
    Sub-seeds for the covariate and noise draws are derived from the config
    seed and recorded in the provenance.
    """
    state = np.random.SeedSequence(cfg.seed).generate_state(2)
    x_seed, noise_seed = int(state[0]), int(state[1])

    x_rng = np.random.default_rng(x_seed)
    if cfg.regime == "L":
        x = x_rng.standard_normal((cfg.n, 2)) + np.array([-2.0, -1.5])
    else:
        x = x_rng.standard_normal((cfg.n, 7))

    noise_fn = spiral_noise if cfg.noise_kind == "spiral" else pinwheel_noise
    eps = noise_fn(noise_seed, cfg.n)
    y_raw = cfg.k_scale * mean_fn(x[:, 0], x[:, 1]) + eps
    y, y_mean, y_std = normalize_targets(y_raw)
    provenance = {
        "kind": "synthetic",
        "name": cfg.name,
        "noise_kind": cfg.noise_kind,
        "regime": cfg.regime,
        "n": cfg.n,
        "seed": cfg.seed,
        "x_seed": x_seed,
        "noise_seed": noise_seed,
        "k_scale": cfg.k_scale,
    }
    return Dataset(x=x, y=y, y_mean=y_mean, y_std=y_std, provenance=provenance)


def load_csv(path: str | Path, x_columns: list[str], y_columns: list[str]) -> Dataset:
    """Read a comma-separated file with a header row into a Dataset.

    Covariates and targets are both standardized (population std); the
    target statistics are kept on the Dataset, the covariate statistics in
    its provenance.  Rows whose field count does not match the header are
    dropped and their 1-based line numbers recorded under
    ``provenance["rejected_rows"]``.  A non-numeric cell in a named column
    raises with its row and column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in list(x_columns) + list(y_columns):
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        x_idx = [header.index(c) for c in x_columns]
        y_idx = [header.index(c) for c in y_columns]

        xs, ys, rejected = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                rejected.append(lineno)
                continue
            try:
                xs.append([float(row[i]) for i in x_idx])
                ys.append([float(row[i]) for i in y_idx])
            except ValueError:
                bad = next(
                    c for c, i in zip(list(x_columns) + list(y_columns), x_idx + y_idx)
                    if not _is_number(row[i])
                )
                raise ParseError(f"{path}: line {lineno}, column {bad!r}: not a number") from None

    if not xs:
        raise SchemaError(f"{path}: no usable data rows")
    x_raw = np.asarray(xs, dtype=float)
    y_raw = np.asarray(ys, dtype=float)
    x_norm, x_mean, x_std = normalize_targets(x_raw)
    y, y_mean, y_std = normalize_targets(y_raw)
    provenance = {
        "kind": "csv",
        "path": str(path),
        "x_columns": list(x_columns),
        "y_columns": list(y_columns),
        "rejected_rows": rejected,
        "x_mean": x_mean.tolist(),
        "x_std": x_std.tolist(),
    }
    return Dataset(x=x_norm, y=y, y_mean=y_mean, y_std=y_std, provenance=provenance)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def split(n_or_dataset, fractions=(0.675, 0.225, 0.10), seed: int = 0) -> SplitAssignment:
    """Partition indices into train/calibration/test by a seeded shuffle.

    The permuted index list is cut at round(f1 n) and round((f1+f2) n), so
    each piece is within one element of its target fraction.
    """
    n = n_or_dataset if isinstance(n_or_dataset, int) else n_or_dataset.n
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise InvalidArgumentError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must sum to 1, got {sum(fractions)}")
    if n < 3:
        raise InvalidArgumentError(f"need at least 3 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    c1 = int(round(fractions[0] * n))
    c2 = int(round((fractions[0] + fractions[1]) * n))
    c1, c2 = max(1, c1), max(2, c2)
    return SplitAssignment(
        train=perm[:c1], cal=perm[c1:c2], test=perm[c2:], fractions=fractions, seed=seed
    )


def volume_rescale(estimate, y_std: np.ndarray) -> float:
    """Map a volume measured in normalized target space to the original scale."""
    value = float(getattr(estimate, "value", estimate))
    return value * float(np.prod(np.asarray(y_std, dtype=float)))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV (x1.. columns then y1..) plus a JSON sidecar.

    Values are printed with 17 significant digits so the round trip is
    bit-exact for doubles.
    """
    path = Path(path)
    p, q = dataset.x.shape[1], dataset.y.shape[1]
    header = [f"x{j+1}" for j in range(p)] + [f"y{j+1}" for j in range(q)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for xi, yi in zip(dataset.x, dataset.y):
            writer.writerow([f"{v:.17g}" for v in xi] + [f"{v:.17g}" for v in yi])
    meta = {
        "format": DATASET_FORMAT,
        "x_dim": p,
        "y_dim": q,
        "y_mean": dataset.y_mean.tolist(),
        "y_std": dataset.y_std.tolist(),
        "provenance": dataset.provenance,
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1))


def load_dataset(path: str | Path) -> Dataset:
    """Inverse of :func:`save_dataset`; does not re-normalize."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    if meta.get("format") != DATASET_FORMAT:
        raise InvalidArgumentError(f"unsupported dataset format {meta.get('format')!r}")
    p, q = meta["x_dim"], meta["y_dim"]
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != p + q:
        raise SchemaError(f"{path}: expected {p + q} columns, found {rows.shape[1]}")
    return Dataset(
        x=rows[:, :p],
        y=rows[:, p:],
        y_mean=np.asarray(meta["y_mean"], dtype=float),
        y_std=np.asarray(meta["y_std"], dtype=float),
        provenance=meta["provenance"],
    )
