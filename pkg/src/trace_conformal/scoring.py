"""Nonconformity scores: transport-alignment scores and baselines.

The transport-alignment family scores a candidate pair (x, y) by how well
the trained conditional model explains perturbations of y along its own
corruption (diffusion) or interpolation (flow) trajectories, averaged over
a fixed bank of common random numbers.  Sharing one bank across every
score evaluation makes scores deterministic, keeps the conformal ordering
consistent, and is what the finite-budget theory analyzes.

Baselines: Mahalanobis ellipsoid and standardized rectangle around a point
predictor, and minimum distance to a set of model samples (union-of-balls
regions).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import genmodels as gm
from . import network as nn
from .errors import InvalidArgumentError, NumericError

SCORE_KINDS = ("trace-diff", "trace-fm", "vlb-weighted", "ellipsoid", "rectangle", "pcp")

PCP_DEFAULT_K = 50
_PCP_CHUNK_ROWS = 32768


@dataclass(frozen=True)
class CRNBank:
    """Pre-drawn auxiliary noise shared by every score evaluation.

    ``time_set`` holds step indices (ints) for diffusion or reals in (0,1]
    for flow matching; ``draws`` has shape (|time_set|, R, target_dim) and
    is a pure function of ``seed`` via a counter-based generator.
    """

    time_set: np.ndarray
    R: int
    draws: np.ndarray
    seed: int

    @property
    def budget(self) -> int:
        return self.time_set.size * self.R

    @property
    def target_dim(self) -> int:
        return self.draws.shape[2]


def build_bank(seed: int, time_set, R: int, target_dim: int) -> CRNBank:
    """Draw the |T| x R x dim standard-normal bank from a Philox stream."""
    time_set = np.asarray(time_set)
    if time_set.ndim != 1 or time_set.size < 1:
        raise InvalidArgumentError("time_set must be a non-empty 1-d array")
    if np.any(np.diff(time_set.astype(float)) <= 0):
        raise InvalidArgumentError("time_set must be strictly increasing")
    if R < 1 or target_dim < 1:
        raise InvalidArgumentError("R and target_dim must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    draws = rng.standard_normal((time_set.size, R, target_dim))
    return CRNBank(time_set=time_set, R=R, draws=draws, seed=seed)


def diffusion_time_set(T: int, size: int) -> np.ndarray:
    """``size`` step indices evenly spread over {1..T} (rounded, distinct)."""
    if not 1 <= size <= T:
        raise InvalidArgumentError(f"need 1 <= size <= {T}, got {size}")
    ts = np.unique(np.round(np.linspace(1, T, size)).astype(int))
    if ts.size != size:
        raise InvalidArgumentError(f"rounded time set collapsed to {ts.size} < {size} steps")
    return ts


def fm_time_grid(size: int) -> np.ndarray:
    """Interior grid t_j = j/(size+1); both endpoints are excluded."""
    if size < 1:
        raise InvalidArgumentError(f"size must be >= 1, got {size}")
    return np.arange(1, size + 1) / (size + 1.0)


def bank_hash(bank: CRNBank) -> str:
    return hashlib.sha256(bank.draws.tobytes()).hexdigest()


def save_bank(bank: CRNBank, path: str | Path) -> None:
    """Persist the bank as metadata plus a draw hash; draws are rebuilt on load."""
    doc = {
        "seed": bank.seed,
        "time_set": bank.time_set.tolist(),
        "R": bank.R,
        "target_dim": bank.target_dim,
        "draws_sha256": bank_hash(bank),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_bank(path: str | Path) -> CRNBank:
    doc = json.loads(Path(path).read_text())
    bank = build_bank(doc["seed"], np.asarray(doc["time_set"]), doc["R"], doc["target_dim"])
    if bank_hash(bank) != doc["draws_sha256"]:
        raise NumericError(f"bank draws do not match the stored hash in {path}")
    return bank


def _check_diffusion_bank(model: gm.DiffusionModel, bank: CRNBank) -> None:
    ts = bank.time_set
    if not np.issubdtype(ts.dtype, np.integer):
        raise InvalidArgumentError("diffusion scoring needs integer step indices in the bank")
    if ts[0] < 1 or ts[-1] > model.schedule.T:
        raise InvalidArgumentError(
            f"bank steps {ts[0]}..{ts[-1]} outside schedule range 1..{model.schedule.T}"
        )
    if bank.target_dim != model.target_dim:
        raise InvalidArgumentError(
            f"bank dimension {bank.target_dim} != model target dimension {model.target_dim}"
        )


def _check_fm_bank(model: gm.FlowModel, bank: CRNBank) -> None:
    ts = bank.time_set.astype(float)
    if ts[0] <= 0.0 or ts[-1] > 1.0:
        raise InvalidArgumentError("flow scoring needs bank times in (0, 1]")
    if bank.target_dim != model.target_dim:
        raise InvalidArgumentError(
            f"bank dimension {bank.target_dim} != model target dimension {model.target_dim}"
        )


def _as_batch(model, X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] != Y.shape[0]:
        raise InvalidArgumentError(f"{X.shape[0]} inputs but {Y.shape[0]} candidates")
    if X.shape[1] != model.cond_dim or Y.shape[1] != model.target_dim:
        raise InvalidArgumentError(
            f"expected shapes (n, {model.cond_dim}) and (n, {model.target_dim}), "
            f"got {X.shape} and {Y.shape}"
        )
    return X, Y


def diffusion_per_t_losses(model: gm.DiffusionModel, bank: CRNBank, X, Y) -> np.ndarray:
    """Per-time mean-over-repeats denoising losses, shape (|T|, n).

    Accumulation runs in fixed time-then-repeat order so results are
    bit-reproducible regardless of external parallelism.
    """
    _check_diffusion_bank(model, bank)
    X, Y = _as_batch(model, X, Y)
    params = gm.inference_params(model)
    sched = model.schedule
    n = X.shape[0]
    out = np.zeros((bank.time_set.size, n))
    for ti, t in enumerate(bank.time_set):
        ab = sched.alpha_bar[int(t) - 1]
        times = np.full(n, int(t) / sched.T)
        acc = np.zeros(n)
        for r in range(bank.R):
            eps = bank.draws[ti, r]
            states = np.sqrt(ab) * Y + np.sqrt(1.0 - ab) * eps
            pred, _ = nn.forward_batch(params, states, times, X)
            acc += np.sum((eps - pred) ** 2, axis=1)
        out[ti] = acc / bank.R
    return out


def fm_per_t_losses(model: gm.FlowModel, bank: CRNBank, X, Y) -> np.ndarray:
    """Per-time mean-over-repeats velocity-regression losses, shape (|T|, n)."""
    _check_fm_bank(model, bank)
    X, Y = _as_batch(model, X, Y)
    params = gm.inference_params(model)
    n = X.shape[0]
    out = np.zeros((bank.time_set.size, n))
    for ti, t in enumerate(bank.time_set):
        t = float(t)
        times = np.full(n, t)
        acc = np.zeros(n)
        for r in range(bank.R):
            y0 = bank.draws[ti, r]
            states = (1.0 - t) * y0 + t * Y
            target = Y - y0
            pred, _ = nn.forward_batch(params, states, times, X)
            acc += np.sum((pred - target) ** 2, axis=1)
        out[ti] = acc / bank.R
    return out


def losses_by_draw(model, bank: CRNBank, X, Y) -> np.ndarray:
    """Raw per-draw losses, shape (|T|, R, n), without averaging.

    Used to estimate the loss-variance constant in the finite-budget
    threshold bound.  Dispatches on the model kind; the mean over the
    first two axes reproduces the corresponding score.
    """
    is_fm = isinstance(model, gm.FlowModel)
    if is_fm:
        _check_fm_bank(model, bank)
    else:
        _check_diffusion_bank(model, bank)
    X, Y = _as_batch(model, X, Y)
    params = gm.inference_params(model)
    n = X.shape[0]
    out = np.zeros((bank.time_set.size, bank.R, n))
    for ti, t in enumerate(bank.time_set):
        if is_fm:
            t = float(t)
            times = np.full(n, t)
        else:
            ab = model.schedule.alpha_bar[int(t) - 1]
            times = np.full(n, int(t) / model.schedule.T)
        for r in range(bank.R):
            draw = bank.draws[ti, r]
            if is_fm:
                states = (1.0 - t) * draw + t * Y
                pred, _ = nn.forward_batch(params, states, times, X)
                out[ti, r] = np.sum((pred - (Y - draw)) ** 2, axis=1)
            else:
                states = np.sqrt(ab) * Y + np.sqrt(1.0 - ab) * draw
                pred, _ = nn.forward_batch(params, states, times, X)
                out[ti, r] = np.sum((draw - pred) ** 2, axis=1)
    return out


def trace_diff_score_batch(model: gm.DiffusionModel, bank: CRNBank, X, Y) -> np.ndarray:
    return diffusion_per_t_losses(model, bank, X, Y).mean(axis=0)


def trace_diff_score(model: gm.DiffusionModel, bank: CRNBank, x, y) -> float:
    return float(trace_diff_score_batch(model, bank, x, y)[0])


def trace_fm_score_batch(model: gm.FlowModel, bank: CRNBank, X, Y) -> np.ndarray:
    return fm_per_t_losses(model, bank, X, Y).mean(axis=0)


def trace_fm_score(model: gm.FlowModel, bank: CRNBank, x, y) -> float:
    return float(trace_fm_score_batch(model, bank, x, y)[0])


def vlb_weights(schedule: gm.NoiseSchedule, time_set: np.ndarray) -> np.ndarray:
    """Likelihood-bound weights at the bank's steps, normalized to mean 1.

    With posterior variance sigma_t^2 = beta_t the per-step weight
    beta_t^2 / (2 sigma_t^2 alpha_t (1 - abar_t)) reduces to
    beta_t / (2 alpha_t (1 - abar_t)).
    """
    t = np.asarray(time_set, dtype=int) - 1
    lam = schedule.beta[t] / (2.0 * schedule.alpha[t] * (1.0 - schedule.alpha_bar[t]))
    return lam / lam.mean()


def vlb_weighted_score_batch(
    model: gm.DiffusionModel, bank: CRNBank, X, Y, weights: np.ndarray | None = None
) -> np.ndarray:
    """Denoising losses averaged with per-time weights (default: VLB)."""
    per_t = diffusion_per_t_losses(model, bank, X, Y)
    if weights is None:
        weights = vlb_weights(model.schedule, bank.time_set)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (bank.time_set.size,):
        raise InvalidArgumentError(f"need {bank.time_set.size} weights, got shape {weights.shape}")
    return (weights[:, None] * per_t).mean(axis=0)


def vlb_weighted_score(model: gm.DiffusionModel, bank: CRNBank, x, y, weights=None) -> float:
    return float(vlb_weighted_score_batch(model, bank, x, y, weights)[0])


@dataclass
class PointPredictor:
    """Mean-regression network with residual covariance and scales.

    The network is the shared substrate queried at a fixed neutral state
    (zero vector, time 0.5), so prediction depends on x alone.
    """

    params: nn.NetworkParams
    cov: np.ndarray
    sigma: np.ndarray
    train_seed: int
    _cov_inv: np.ndarray | None = field(default=None, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        states = np.zeros((X.shape[0], self.params.input_dim))
        times = np.full(X.shape[0], 0.5)
        out, _ = nn.forward_batch(self.params, states, times, X)
        return out

    def cov_inverse(self) -> np.ndarray:
        if self._cov_inv is None:
            try:
                chol = np.linalg.cholesky(self.cov)
            except np.linalg.LinAlgError:
                raise NumericError("residual covariance is singular") from None
            eye = np.eye(self.cov.shape[0])
            self._cov_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, eye))
        return self._cov_inv


def train_point_predictor(dataset, config: gm.TrainConfig, arch: nn.NetworkArch) -> PointPredictor:
    """Fit the conditional mean by squared loss; estimate residual spread.

    Residual covariance and per-dimension scales use the population
    (denominator n) convention on the training data.
    """
    X, Y = gm._xy(dataset)

    def make_batch(rng, y):
        b = y.shape[0]
        return np.zeros_like(y), np.full(b, 0.5), y

    params, ema, _, _ = gm._train_loop(X, Y, config, arch, make_batch)
    pred = PointPredictor(
        params=nn.ema_params(params, ema),
        cov=np.eye(Y.shape[1]),
        sigma=np.ones(Y.shape[1]),
        train_seed=config.seed,
    )
    resid = Y - pred.predict(X)
    cov = (resid.T @ resid) / resid.shape[0]
    sigma = resid.std(axis=0)
    if np.any(sigma <= 0.0):
        raise NumericError("a residual dimension has zero spread; scales undefined")
    pred.cov = cov
    pred.sigma = sigma
    return pred


def save_predictor(pred: PointPredictor, ckpt_path) -> None:
    """Write predictor weights plus a sidecar with covariance and scales."""
    ckpt_path = Path(ckpt_path)
    nn.save_checkpoint(pred.params, ckpt_path)
    meta = {
        "format": gm.MODEL_FORMAT,
        "kind": "point",
        "train_seed": pred.train_seed,
        "cov": [[float(v) for v in row] for row in pred.cov],
        "sigma": [float(v) for v in pred.sigma],
    }
    Path(str(ckpt_path) + ".meta.json").write_text(json.dumps(meta, indent=1))


def load_predictor(ckpt_path) -> PointPredictor:
    ckpt_path = Path(ckpt_path)
    params = nn.load_checkpoint(ckpt_path)
    meta = json.loads(Path(str(ckpt_path) + ".meta.json").read_text())
    if meta.get("format") != gm.MODEL_FORMAT or meta.get("kind") != "point":
        raise InvalidArgumentError("checkpoint is not a saved point predictor")
    return PointPredictor(
        params=params,
        cov=np.array(meta["cov"], dtype=float),
        sigma=np.array(meta["sigma"], dtype=float),
        train_seed=meta["train_seed"],
    )


def ellipsoid_score_batch(pred: PointPredictor, X, Y) -> np.ndarray:
    """Mahalanobis distance sqrt(r^T cov^-1 r) of the residual r."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    resid = Y - pred.predict(X)
    cov_inv = pred.cov_inverse()
    return np.sqrt(np.einsum("ij,jk,ik->i", resid, cov_inv, resid))


def ellipsoid_score(pred: PointPredictor, x, y) -> float:
    return float(ellipsoid_score_batch(pred, x, y)[0])


def rectangle_score_batch(pred: PointPredictor, X, Y) -> np.ndarray:
    """Largest per-dimension standardized residual max_j |r_j| / sigma_j."""
    if np.any(pred.sigma <= 0.0):
        raise InvalidArgumentError("per-dimension scales must be positive")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    resid = Y - pred.predict(X)
    return np.max(np.abs(resid) / pred.sigma, axis=1)


def rectangle_score(pred: PointPredictor, x, y) -> float:
    return float(rectangle_score_batch(pred, x, y)[0])


def pcp_samples(model: gm.DiffusionModel, X, K: int = PCP_DEFAULT_K, seed: int = 0) -> np.ndarray:
    """K model samples per input row, shape (n, K, target_dim).

    All rows are sampled in one batched ancestral pass (chunked at a fixed
    row count to bound memory), so the draw is deterministic in
    (X, K, seed).
    """
    if K < 1:
        raise InvalidArgumentError(f"K must be >= 1, got {K}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xrep = np.repeat(X, K, axis=0)
    total = Xrep.shape[0]
    n_chunks = (total + _PCP_CHUNK_ROWS - 1) // _PCP_CHUNK_ROWS
    seeds = np.random.SeedSequence(seed).generate_state(max(n_chunks, 1))
    parts = []
    for c in range(n_chunks):
        lo, hi = c * _PCP_CHUNK_ROWS, min((c + 1) * _PCP_CHUNK_ROWS, total)
        parts.append(gm.ddpm_sample_batch(model, Xrep[lo:hi], seed=int(seeds[c])))
    samples = np.concatenate(parts, axis=0)
    return samples.reshape(X.shape[0], K, model.target_dim)


def pcp_score(samples: np.ndarray, y) -> float:
    """Distance from y to the nearest sample."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise InvalidArgumentError("need a non-empty (K, dim) sample array")
    y = np.asarray(y, dtype=float)
    return float(np.min(np.linalg.norm(samples - y, axis=1)))


def pcp_score_batch(samples: np.ndarray, Y) -> np.ndarray:
    """Row-wise nearest-sample distances for (n, K, dim) samples."""
    samples = np.asarray(samples, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if samples.ndim != 3 or samples.shape[0] != Y.shape[0]:
        raise InvalidArgumentError("samples must be (n, K, dim) aligned with Y rows")
    return np.min(np.linalg.norm(samples - Y[:, None, :], axis=2), axis=1)


def trace_grid_scores(model, bank: CRNBank, x, P, kind: str) -> np.ndarray:
    """Transport scores of many candidate outputs for one fixed input.

    Runs a preallocated inference session over the candidate grid, which
    is much faster than the generic batched path when the grid is large
    and x is fixed (the volume-estimation workload).  Values agree with
    the batched scores up to floating-point associativity.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1)
    params = gm.inference_params(model)
    X = np.tile(x, (P.shape[0], 1))
    session = nn.InferenceSession(params, X)
    n = P.shape[0]
    per_t = np.empty((bank.time_set.size, n))
    if kind == "trace-fm":
        _check_fm_bank(model, bank)
        for ti, t in enumerate(bank.time_set):
            t = float(t)
            acc = np.zeros(n)
            for r in range(bank.R):
                y0 = bank.draws[ti, r]
                states = (1.0 - t) * y0 + t * P
                pred = session.run(states, t)
                acc += np.sum((pred - (P - y0)) ** 2, axis=1)
            per_t[ti] = acc / bank.R
    else:
        _check_diffusion_bank(model, bank)
        sched = model.schedule
        for ti, t in enumerate(bank.time_set):
            ab = sched.alpha_bar[int(t) - 1]
            frac = int(t) / sched.T
            acc = np.zeros(n)
            for r in range(bank.R):
                eps = bank.draws[ti, r]
                states = np.sqrt(ab) * P + np.sqrt(1.0 - ab) * eps
                pred = session.run(states, frac)
                acc += np.sum((eps - pred) ** 2, axis=1)
            per_t[ti] = acc / bank.R
    if kind == "vlb-weighted":
        weights = vlb_weights(model.schedule, bank.time_set)
        return (weights[:, None] * per_t).mean(axis=0)
    return per_t.mean(axis=0)


@dataclass
class ScoreFunction:
    """A named score with everything needed to evaluate it.

    ``kind`` selects the formula; the relevant references (model, bank,
    predictor, PCP settings) must be present for that kind.  Evaluation is
    deterministic given the object.
    """

    kind: str
    model: object = None
    bank: CRNBank | None = None
    predictor: PointPredictor | None = None
    K: int = PCP_DEFAULT_K
    sample_seed: int = 0

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise InvalidArgumentError(f"unknown score kind {self.kind!r}")
        needs = {
            "trace-diff": ("model", "bank"),
            "trace-fm": ("model", "bank"),
            "vlb-weighted": ("model", "bank"),
            "ellipsoid": ("predictor",),
            "rectangle": ("predictor",),
            "pcp": ("model",),
        }[self.kind]
        for attr in needs:
            if getattr(self, attr) is None:
                raise InvalidArgumentError(f"score kind {self.kind!r} needs {attr}")

    def score_batch(self, X, Y) -> np.ndarray:
        if self.kind == "trace-diff":
            return trace_diff_score_batch(self.model, self.bank, X, Y)
        if self.kind == "trace-fm":
            return trace_fm_score_batch(self.model, self.bank, X, Y)
        if self.kind == "vlb-weighted":
            return vlb_weighted_score_batch(self.model, self.bank, X, Y)
        if self.kind == "ellipsoid":
            return ellipsoid_score_batch(self.predictor, X, Y)
        if self.kind == "rectangle":
            return rectangle_score_batch(self.predictor, X, Y)
        samples = pcp_samples(self.model, X, self.K, self.sample_seed)
        return pcp_score_batch(samples, Y)

    def score_one(self, x, y) -> float:
        return float(self.score_batch(x, y)[0])

    def score_grid(self, x, P) -> np.ndarray:
        """Scores of many candidate outputs for one fixed input.

        The transport kinds take a fixed-input fast path; the
        sample-based kind draws its candidate set once for the input
        instead of once per grid row.
        """
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if self.kind in ("trace-diff", "trace-fm", "vlb-weighted"):
            return trace_grid_scores(self.model, self.bank, x, P, self.kind)
        if self.kind == "pcp":
            x = np.atleast_2d(np.asarray(x, dtype=float))
            samples = pcp_samples(self.model, x, self.K, self.sample_seed)[0]
            return np.min(np.linalg.norm(P[:, None, :] - samples[None, :, :], axis=2), axis=1)
        X = np.tile(np.asarray(x, dtype=float).reshape(-1), (P.shape[0], 1))
        return self.score_batch(X, P)


def save_scores_csv(scores: np.ndarray, kind: str, path: str | Path, ids=None) -> None:
    """Score rows as (point_id, score_kind, value)."""
    scores = np.asarray(scores, dtype=float)
    if ids is None:
        ids = np.arange(scores.size)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "score_kind", "value"])
        for i, v in zip(ids, scores):
            writer.writerow([int(i), kind, f"{v:.17g}"])
