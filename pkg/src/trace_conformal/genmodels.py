"""Conditional denoising-diffusion and flow-matching models.

Both model families share the nn-core network substrate: diffusion trains a
noise predictor eps_hat(y_t, t, x) against the DDPM forward corruption, flow
matching trains a velocity field v_hat(y_t, t, x) along straight-line paths.
Exponential-moving-average weights are tracked during training and are the
ones used for all sampling and scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import network as nn
from .errors import InvalidArgumentError, NumericError

MODEL_FORMAT = "trace-model-v1"


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule with cached cumulative products.

    Arrays are indexed 0..T-1 for steps 1..T.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    seed: int
    ema_decay: float = 0.999

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if not 0.0 < self.ema_decay < 1.0:
            raise InvalidArgumentError("ema_decay must lie in (0, 1)")


@dataclass
class DiffusionModel:
    params: nn.NetworkParams
    ema: nn.EmaParams
    schedule: NoiseSchedule
    target_dim: int
    cond_dim: int
    train_seed: int
    first_epoch_loss: float | None = None
    last_epoch_loss: float | None = None


@dataclass
class FlowModel:
    params: nn.NetworkParams
    ema: nn.EmaParams
    target_dim: int
    cond_dim: int
    train_seed: int
    first_epoch_loss: float | None = None
    last_epoch_loss: float | None = None


def inference_params(model) -> nn.NetworkParams:
    """The EMA weights of a model, packaged as a parameter set."""
    return nn.ema_params(model.params, model.ema)


def make_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas on [beta_min, beta_max] and their products."""
    if T < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise InvalidArgumentError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def diffuse(y: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward corruption y_t = sqrt(abar_t) y + sqrt(1 - abar_t) eps."""
    if not 1 <= t <= schedule.T:
        raise InvalidArgumentError(f"step index {t} outside 1..{schedule.T}")
    y = np.asarray(y, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if y.shape != eps.shape:
        raise InvalidArgumentError(f"y shape {y.shape} != eps shape {eps.shape}")
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * y + np.sqrt(1.0 - ab) * eps


def fm_interpolate(y0: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    """Point on the straight-line path: (1 - t) y0 + t y."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"path time {t} outside [0, 1]")
    y0 = np.asarray(y0, dtype=float)
    y = np.asarray(y, dtype=float)
    if y0.shape != y.shape:
        raise InvalidArgumentError(f"y0 shape {y0.shape} != y shape {y.shape}")
    return (1.0 - t) * y0 + t * y


def _xy(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2:
        X, Y = dataset
    else:
        X, Y = dataset.x, dataset.y
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise InvalidArgumentError("dataset must provide matching non-empty (x, y) arrays")
    return X, Y


def _train_loop(X, Y, config, arch, make_batch):
    """Shared minibatch Adam/EMA loop; make_batch builds (state, time, target)."""
    n, target_dim = Y.shape
    cond_dim = X.shape[1]
    rng = np.random.default_rng(config.seed)
    params = nn.init_network(
        seed=int(rng.integers(2**31)),
        input_dim=target_dim,
        cond_dim=cond_dim,
        hidden=arch.hidden,
        blocks=arch.blocks,
        embed_dim=arch.embed_dim,
        time_freqs=arch.time_freqs,
    )
    state = nn.init_adam_state(params)
    ema = nn.init_ema(params, config.ema_decay)
    first_loss = last_loss = None
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            states, times, targets = make_batch(rng, Y[idx])
            loss, grads = nn.loss_and_grad(params, (states, times, X[idx], targets))
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, step {n_batches}")
            params, state = nn.adam_step(params, grads, state, lr=config.lr)
            ema = nn.ema_update(ema, params)
            epoch_loss += loss
            n_batches += 1
        epoch_loss /= n_batches
        if first_loss is None:
            first_loss = epoch_loss
        last_loss = epoch_loss
    return params, ema, first_loss, last_loss


def train_diffusion(
    dataset,
    config: TrainConfig,
    arch: nn.NetworkArch,
    schedule: NoiseSchedule | None = None,
) -> DiffusionModel:
    """Fit a noise predictor by regression on corrupted targets.

    Each minibatch draws step indices uniformly from {1..T} and fresh
    standard-normal noise, corrupts the targets along the forward process,
    and minimizes the mean squared error between the drawn noise and the
    network's prediction at (y_t, t/T, x).
    """
    X, Y = _xy(dataset)
    if schedule is None:
        schedule = make_schedule(1000, 1e-4, 0.02)
    abar = schedule.alpha_bar

    def make_batch(rng, y):
        b = y.shape[0]
        t_idx = rng.integers(1, schedule.T + 1, size=b)
        eps = rng.standard_normal(y.shape)
        ab = abar[t_idx - 1][:, None]
        states = np.sqrt(ab) * y + np.sqrt(1.0 - ab) * eps
        return states, t_idx / schedule.T, eps

    params, ema, first, last = _train_loop(X, Y, config, arch, make_batch)
    return DiffusionModel(
        params=params,
        ema=ema,
        schedule=schedule,
        target_dim=Y.shape[1],
        cond_dim=X.shape[1],
        train_seed=config.seed,
        first_epoch_loss=first,
        last_epoch_loss=last,
    )


def train_fm(dataset, config: TrainConfig, arch: nn.NetworkArch) -> FlowModel:
    """Fit a velocity field by regression along straight-line paths.

    Each minibatch draws t uniform on [0,1] and a standard-normal source
    point y0, forms the path point (1-t) y0 + t y, and regresses the
    network output at (y_t, t, x) onto the constant path velocity y - y0.
    """
    X, Y = _xy(dataset)

    def make_batch(rng, y):
        b = y.shape[0]
        t = rng.uniform(size=b)
        y0 = rng.standard_normal(y.shape)
        states = (1.0 - t)[:, None] * y0 + t[:, None] * y
        return states, t, y - y0

    params, ema, first, last = _train_loop(X, Y, config, arch, make_batch)
    return FlowModel(
        params=params,
        ema=ema,
        target_dim=Y.shape[1],
        cond_dim=X.shape[1],
        train_seed=config.seed,
        first_epoch_loss=first,
        last_epoch_loss=last,
    )


def ddpm_sample_batch(model: DiffusionModel, X: np.ndarray, seed: int) -> np.ndarray:
    """Ancestral samples, one per row of X, using the EMA weights.

    Starts from pure noise at step T and walks the reverse chain with
    posterior noise scale sigma_t = sqrt(beta_t); the final step adds no
    noise.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.cond_dim:
        raise InvalidArgumentError(f"conditioning batch has shape {X.shape}, expected (n, {model.cond_dim})")
    sched = model.schedule
    session = nn.InferenceSession(inference_params(model), X)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    y = rng.standard_normal((n, model.target_dim))
    for t in range(sched.T, 0, -1):
        i = t - 1
        eps_hat = session.run(y, t / sched.T)
        mean = (y - sched.beta[i] / np.sqrt(1.0 - sched.alpha_bar[i]) * eps_hat) / np.sqrt(sched.alpha[i])
        if t > 1:
            y = mean + np.sqrt(sched.beta[i]) * rng.standard_normal((n, model.target_dim))
        else:
            y = mean
    return y


def ddpm_sample(model: DiffusionModel, x: np.ndarray, seed: int) -> np.ndarray:
    return ddpm_sample_batch(model, np.asarray(x, dtype=float)[None, :], seed)[0]


def euler_integrate(v_fn, y0: np.ndarray, n_steps: int) -> np.ndarray:
    """Euler steps of dy/dt = v(y, t) from t=0 to t=1.

    ``v_fn(y, t)`` takes a batch of states and a scalar time; step k starts
    at t = k / n_steps.
    """
    if n_steps < 1:
        raise InvalidArgumentError(f"n_steps must be >= 1, got {n_steps}")
    y = np.asarray(y0, dtype=float).copy()
    h = 1.0 / n_steps
    for k in range(n_steps):
        y = y + h * v_fn(y, k * h)
    return y


def fm_sample_batch(model: FlowModel, X: np.ndarray, seed: int, n_steps: int = 100) -> np.ndarray:
    """Euler ODE samples, one per row of X, using the EMA weights."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.cond_dim:
        raise InvalidArgumentError(f"conditioning batch has shape {X.shape}, expected (n, {model.cond_dim})")
    session = nn.InferenceSession(inference_params(model), X)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    y0 = rng.standard_normal((n, model.target_dim))
    return euler_integrate(lambda y, t: session.run(y, t), y0, n_steps)


def fm_sample(model: FlowModel, x: np.ndarray, n_steps: int = 100, seed: int = 0) -> np.ndarray:
    return fm_sample_batch(model, np.asarray(x, dtype=float)[None, :], seed, n_steps)[0]


def save_model(model, ckpt_path: str | Path) -> None:
    """Write the EMA inference weights (nn-core checkpoint) plus a sidecar.

    The sidecar at ``<ckpt_path>.meta.json`` records the model kind, the
    schedule (for diffusion), dimensions, EMA decay, and the training seed.
    """
    ckpt_path = Path(ckpt_path)
    nn.save_checkpoint(inference_params(model), ckpt_path)
    meta = {
        "format": MODEL_FORMAT,
        "kind": "diffusion" if isinstance(model, DiffusionModel) else "fm",
        "target_dim": model.target_dim,
        "cond_dim": model.cond_dim,
        "train_seed": model.train_seed,
        "ema_decay": model.ema.decay,
    }
    if isinstance(model, DiffusionModel):
        s = model.schedule
        meta["schedule"] = {"T": s.T, "beta_min": float(s.beta[0]), "beta_max": float(s.beta[-1])}
    Path(str(ckpt_path) + ".meta.json").write_text(json.dumps(meta, indent=1))


def load_model(ckpt_path: str | Path):
    """Rebuild a model from :func:`save_model` output.

    The raw parameters and the EMA shadow both carry the saved inference
    weights, so scoring and sampling behave identically to the model that
    was saved.
    """
    ckpt_path = Path(ckpt_path)
    params = nn.load_checkpoint(ckpt_path)
    meta = json.loads(Path(str(ckpt_path) + ".meta.json").read_text())
    if meta.get("format") != MODEL_FORMAT:
        raise InvalidArgumentError(f"unsupported model format {meta.get('format')!r}")
    ema = nn.init_ema(params, meta["ema_decay"])
    common = dict(
        params=params,
        ema=ema,
        target_dim=meta["target_dim"],
        cond_dim=meta["cond_dim"],
        train_seed=meta["train_seed"],
    )
    if meta["kind"] == "diffusion":
        s = meta["schedule"]
        return DiffusionModel(schedule=make_schedule(s["T"], s["beta_min"], s["beta_max"]), **common)
    if meta["kind"] == "fm":
        return FlowModel(**common)
    raise InvalidArgumentError(f"unknown model kind {meta['kind']!r}")
