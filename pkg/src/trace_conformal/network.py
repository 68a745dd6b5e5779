"""Dense network substrate for the conditional generative models.

A fixed architecture family: an input embedding for the (state, time) pair,
a conditioning embedding for the covariates, a stack of FiLM-modulated
residual MLP blocks, and a linear output head.  Gradients are computed by
hand-written reverse mode for exactly this family, which keeps every
operation a pure function of numpy arrays and makes runs bit-reproducible.

All arithmetic is double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, NumericError

CHECKPOINT_FORMAT = "trace-ckpt-v1"


@dataclass(frozen=True)
class NetworkArch:
    """Architecture hyperparameters, independent of the data dimensions.

    ``embed_dim`` is the width of the conditioning embedding that feeds the
    per-block FiLM generators; ``None`` means ``hidden // 2``.
    """

    hidden: int = 64
    blocks: int = 3
    embed_dim: int | None = None
    time_freqs: int = 8

    def resolved_embed(self) -> int:
        return self.embed_dim if self.embed_dim is not None else max(self.hidden // 2, 8)


@dataclass
class NetworkParams:
    """All weights of one network, keyed by layer name.

    Layer names follow a fixed scheme (``in``, ``cond``, ``block{i}.*``,
    ``out``); iteration order over ``layers`` is the construction order and
    is relied upon for deterministic updates.
    """

    input_dim: int
    cond_dim: int
    hidden: int
    blocks: int
    embed_dim: int
    time_freqs: int
    layers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            input_dim=self.input_dim,
            cond_dim=self.cond_dim,
            hidden=self.hidden,
            blocks=self.blocks,
            embed_dim=self.embed_dim,
            time_freqs=self.time_freqs,
            layers={k: v.copy() for k, v in self.layers.items()},
        )


@dataclass
class AdamState:
    """First/second moment accumulators, shaped like the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


@dataclass
class EmaParams:
    """Exponential-moving-average shadow of a parameter set."""

    shadow: dict[str, np.ndarray]
    decay: float


def _check_positive(**counts: int) -> None:
    for name, value in counts.items():
        if value < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")


def init_network(
    seed: int,
    input_dim: int,
    cond_dim: int,
    hidden: int,
    blocks: int,
    embed_dim: int | None = None,
    time_freqs: int = 8,
) -> NetworkParams:
    """Create a fresh parameter set, deterministically from ``seed``.

    Weights are zero-mean normal with scale 1/sqrt(fan_in); biases are zero.
    FiLM generator weights and biases start at zero, so every block initially
    applies scale 1 / shift 0 and the network ignores the conditioning input.
    """
    _check_positive(input_dim=input_dim, cond_dim=cond_dim, hidden=hidden, blocks=blocks)
    embed = embed_dim if embed_dim is not None else max(hidden // 2, 8)
    _check_positive(embed_dim=embed, time_freqs=time_freqs)

    rng = np.random.default_rng(seed)
    tdim = 2 * time_freqs

    def dense(name: str, fan_out: int, fan_in: int) -> None:
        layers[name + ".W"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers[name + ".b"] = np.zeros(fan_out)

    def film(name: str, fan_out: int, fan_in: int) -> None:
        layers[name + ".W"] = np.zeros((fan_out, fan_in))
        layers[name + ".b"] = np.zeros(fan_out)

    layers: dict[str, np.ndarray] = {}
    dense("in", hidden, input_dim + tdim)
    dense("cond", embed, cond_dim + tdim)
    for i in range(blocks):
        dense(f"block{i}.fc1", hidden, hidden)
        dense(f"block{i}.fc2", hidden, hidden)
        film(f"block{i}.scale", hidden, embed)
        film(f"block{i}.shift", hidden, embed)
    dense("out", input_dim, hidden)

    return NetworkParams(
        input_dim=input_dim,
        cond_dim=cond_dim,
        hidden=hidden,
        blocks=blocks,
        embed_dim=embed,
        time_freqs=time_freqs,
        layers=layers,
    )


def time_features(t: np.ndarray, freqs: int) -> np.ndarray:
    """Sinusoidal features of a time value in [0, 1]: shape (n, 2*freqs)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = 2.0 ** np.arange(freqs)
    phase = 2.0 * np.pi * t[:, None] * k[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def _silu(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Returns (silu(z), sigmoid(z)); the sigmoid is reused by the backward
    # pass.  The tanh form is overflow-free on both tails.
    sig = np.tanh(0.5 * z)
    sig += 1.0
    sig *= 0.5
    return z * sig, sig


def _silu_grad(z: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return sig * (1.0 + z * (1.0 - sig))


def _validate_batch_shapes(params: NetworkParams, Y: np.ndarray, T: np.ndarray, X: np.ndarray) -> None:
    if Y.ndim != 2 or Y.shape[1] != params.input_dim:
        raise InvalidArgumentError(
            f"state batch has shape {Y.shape}, expected (n, {params.input_dim})"
        )
    if X.ndim != 2 or X.shape[1] != params.cond_dim:
        raise InvalidArgumentError(
            f"conditioning batch has shape {X.shape}, expected (n, {params.cond_dim})"
        )
    if T.shape != (Y.shape[0],):
        raise InvalidArgumentError(f"time batch has shape {T.shape}, expected ({Y.shape[0]},)")
    if np.any(T < 0.0) or np.any(T > 1.0):
        raise InvalidArgumentError("time values must lie in [0, 1]")


def forward_batch(
    params: NetworkParams,
    Y: np.ndarray,
    T: np.ndarray,
    X: np.ndarray,
    want_cache: bool = False,
):
    """Batched forward pass; returns (out, cache) with out of shape (n, input_dim).

    ``cache`` is None unless ``want_cache`` and is consumed by
    :func:`backward_batch`.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    _validate_batch_shapes(params, Y, T, X)
    L = params.layers

    if T.size > 1 and T[0] == T[-1] and np.all(T == T[0]):
        # Constant-time batches are the norm in sampling and scoring;
        # skip the per-row transcendentals.
        tf = np.broadcast_to(time_features(T[:1], params.time_freqs), (T.size, 2 * params.time_freqs))
    else:
        tf = time_features(T, params.time_freqs)
    u0 = np.concatenate([Y, tf], axis=1)
    h = u0 @ L["in.W"].T + L["in.b"]

    c0 = np.concatenate([X, tf], axis=1)
    zc = c0 @ L["cond.W"].T + L["cond.b"]
    c, sig_c = _silu(zc)

    block_cache = []
    for i in range(params.blocks):
        z1 = h @ L[f"block{i}.fc1.W"].T + L[f"block{i}.fc1.b"]
        a1, sig1 = _silu(z1)
        gamma = c @ L[f"block{i}.scale.W"].T + L[f"block{i}.scale.b"]
        shift = c @ L[f"block{i}.shift.W"].T + L[f"block{i}.shift.b"]
        mod = a1 * (1.0 + gamma) + shift
        z2 = mod @ L[f"block{i}.fc2.W"].T + L[f"block{i}.fc2.b"]
        if want_cache:
            block_cache.append((h, z1, a1, sig1, gamma, mod))
        h = h + z2

    out = h @ L["out.W"].T + L["out.b"]
    if not want_cache:
        return out, None
    cache = {
        "u0": u0,
        "c0": c0,
        "zc": zc,
        "sig_c": sig_c,
        "c": c,
        "blocks": block_cache,
        "h_final": h,
    }
    return out, cache


class InferenceSession:
    """Repeated forward passes over a fixed conditioning batch.

    Samplers call the network hundreds of times with the same X and a
    scalar time per call; this path pre-transposes the weights, reuses all
    intermediate buffers, and hoists the X part of the conditioning
    embedding out of the loop.  Results match :func:`forward_batch` to
    floating-point associativity (the accumulation order of the input
    layer differs).
    """

    def __init__(self, params: NetworkParams, X: np.ndarray):
        X = np.ascontiguousarray(np.asarray(X, dtype=float))
        if X.ndim != 2 or X.shape[1] != params.cond_dim:
            raise InvalidArgumentError(
                f"conditioning batch has shape {X.shape}, expected (n, {params.cond_dim})"
            )
        self.params = params
        self.n = n = X.shape[0]
        L = params.layers
        tdim = 2 * params.time_freqs
        hid = params.hidden
        emb = params.embed_dim

        self._winY = np.ascontiguousarray(L["in.W"][:, : params.input_dim].T)
        self._wint = np.ascontiguousarray(L["in.W"][:, params.input_dim :].T)
        self._in_b = L["in.b"]
        # X part of the conditioning embedding never changes
        self._cx = X @ L["cond.W"][:, : params.cond_dim].T + L["cond.b"]
        self._wct = np.ascontiguousarray(L["cond.W"][:, params.cond_dim :].T)
        self._blocks = []
        for i in range(params.blocks):
            self._blocks.append(
                (
                    np.ascontiguousarray(L[f"block{i}.fc1.W"].T),
                    L[f"block{i}.fc1.b"],
                    np.ascontiguousarray(L[f"block{i}.fc2.W"].T),
                    L[f"block{i}.fc2.b"],
                    np.ascontiguousarray(L[f"block{i}.scale.W"].T),
                    L[f"block{i}.scale.b"],
                    np.ascontiguousarray(L[f"block{i}.shift.W"].T),
                    L[f"block{i}.shift.b"],
                )
            )
        self._wout = np.ascontiguousarray(L["out.W"].T)
        self._out_b = L["out.b"]

        self._h = np.empty((n, hid))
        self._c = np.empty((n, emb))
        self._z1 = np.empty((n, hid))
        self._gamma = np.empty((n, hid))
        self._shift = np.empty((n, hid))
        self._z2 = np.empty((n, hid))
        self._out = np.empty((n, params.input_dim))
        self._tdim = tdim

    @staticmethod
    def _silu_(z: np.ndarray) -> None:
        # in-place z <- z * sigmoid(z)
        sig = np.tanh(0.5 * z)
        sig += 1.0
        sig *= 0.5
        z *= sig

    def run(self, Y: np.ndarray, t: float) -> np.ndarray:
        """Output for states Y at scalar time t; the buffer is reused."""
        tf = time_features(np.asarray([t], dtype=float), self.params.time_freqs)[0]
        np.dot(Y, self._winY, out=self._h)
        self._h += tf @ self._wint + self._in_b

        np.add(self._cx, tf @ self._wct, out=self._c)
        self._silu_(self._c)

        for w1, b1, w2, b2, wg, bg, ws, bs in self._blocks:
            np.dot(self._h, w1, out=self._z1)
            self._z1 += b1
            self._silu_(self._z1)
            np.dot(self._c, wg, out=self._gamma)
            self._gamma += bg
            self._gamma += 1.0
            np.dot(self._c, ws, out=self._shift)
            self._shift += bs
            self._z1 *= self._gamma
            self._z1 += self._shift
            np.dot(self._z1, w2, out=self._z2)
            self._z2 += b2
            self._h += self._z2

        np.dot(self._h, self._wout, out=self._out)
        self._out += self._out_b
        return self._out


def forward(params: NetworkParams, y_state: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
    """Single-sample forward pass; output has the dimension of ``y_state``."""
    out, _ = forward_batch(
        params,
        np.asarray(y_state, dtype=float)[None, :],
        np.asarray([t], dtype=float),
        np.asarray(x, dtype=float)[None, :],
    )
    return out[0]


def backward_batch(params: NetworkParams, cache: dict, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of sum(grad_out * out) w.r.t. every layer."""
    L = params.layers
    grads: dict[str, np.ndarray] = {}

    h_final = cache["h_final"]
    grads["out.W"] = grad_out.T @ h_final
    grads["out.b"] = grad_out.sum(axis=0)
    g_h = grad_out @ L["out.W"]

    c = cache["c"]
    g_c = np.zeros_like(c)
    for i in reversed(range(params.blocks)):
        h_in, z1, a1, sig1, gamma, mod = cache["blocks"][i]
        g_z2 = g_h
        grads[f"block{i}.fc2.W"] = g_z2.T @ mod
        grads[f"block{i}.fc2.b"] = g_z2.sum(axis=0)
        g_mod = g_z2 @ L[f"block{i}.fc2.W"]

        g_a1 = g_mod * (1.0 + gamma)
        g_gamma = g_mod * a1
        g_shift = g_mod
        grads[f"block{i}.scale.W"] = g_gamma.T @ c
        grads[f"block{i}.scale.b"] = g_gamma.sum(axis=0)
        grads[f"block{i}.shift.W"] = g_shift.T @ c
        grads[f"block{i}.shift.b"] = g_shift.sum(axis=0)
        g_c += g_gamma @ L[f"block{i}.scale.W"] + g_shift @ L[f"block{i}.shift.W"]

        g_z1 = g_a1 * _silu_grad(z1, sig1)
        grads[f"block{i}.fc1.W"] = g_z1.T @ h_in
        grads[f"block{i}.fc1.b"] = g_z1.sum(axis=0)
        g_h = g_h + g_z1 @ L[f"block{i}.fc1.W"]

    grads["in.W"] = g_h.T @ cache["u0"]
    grads["in.b"] = g_h.sum(axis=0)

    g_zc = g_c * _silu_grad(cache["zc"], cache["sig_c"])
    grads["cond.W"] = g_zc.T @ cache["c0"]
    grads["cond.b"] = g_zc.sum(axis=0)
    return grads


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 4:
        Y, T, X, G = (np.asarray(a, dtype=float) for a in batch)
        return Y, T, X, G
    items = list(batch)
    if not items:
        raise InvalidArgumentError("batch must be non-empty")
    Y = np.stack([np.asarray(it[0], dtype=float) for it in items])
    T = np.asarray([float(it[1]) for it in items])
    X = np.stack([np.asarray(it[2], dtype=float) for it in items])
    G = np.stack([np.asarray(it[3], dtype=float) for it in items])
    return Y, T, X, G


def loss_and_grad(params: NetworkParams, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared-error loss over a batch and its exact gradient.

    ``batch`` is either a list of ``(y_state, t, x, target)`` tuples or a
    tuple of four stacked arrays.  The loss is the mean over items of the
    squared Euclidean distance between the network output and the target.
    """
    Y, T, X, targets = _batch_arrays(batch)
    if Y.shape[0] == 0:
        raise InvalidArgumentError("batch must be non-empty")
    if targets.shape != Y.shape:
        raise InvalidArgumentError(f"target batch has shape {targets.shape}, expected {Y.shape}")
    out, cache = forward_batch(params, Y, T, X, want_cache=True)
    resid = out - targets
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grad_out = (2.0 / Y.shape[0]) * resid
    grads = backward_batch(params, cache, grad_out)
    return loss, grads


def init_adam_state(params: NetworkParams) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(a) for k, a in params.layers.items()},
        v={k: np.zeros_like(a) for k, a in params.layers.items()},
        step=0,
    )


def adam_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[NetworkParams, AdamState]:
    """One Adam update with bias correction; returns fresh params and state."""
    if set(grads) != set(params.layers):
        raise InvalidArgumentError("gradient layers do not match parameter layers")
    step = state.step + 1
    new_layers: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for name, w in params.layers.items():
        g = grads[name]
        if g.shape != w.shape:
            raise InvalidArgumentError(f"gradient shape mismatch for layer {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {name!r}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        new_m[name] = m
        new_v[name] = v
        new_layers[name] = w - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    out = params.copy()
    out.layers = new_layers
    return out, AdamState(m=new_m, v=new_v, step=step)


def init_ema(params: NetworkParams, decay: float) -> EmaParams:
    if not 0.0 < decay < 1.0:
        raise InvalidArgumentError(f"ema decay must lie in (0, 1), got {decay}")
    return EmaParams(shadow={k: a.copy() for k, a in params.layers.items()}, decay=decay)


def ema_update(ema: EmaParams, params: NetworkParams) -> EmaParams:
    """shadow <- decay * shadow + (1 - decay) * params, elementwise."""
    if set(ema.shadow) != set(params.layers):
        raise InvalidArgumentError("EMA shadow layers do not match parameter layers")
    shadow: dict[str, np.ndarray] = {}
    for name, w in params.layers.items():
        s = ema.shadow[name]
        if s.shape != w.shape:
            raise InvalidArgumentError(f"EMA shape mismatch for layer {name!r}")
        shadow[name] = ema.decay * s + (1.0 - ema.decay) * w
    return EmaParams(shadow=shadow, decay=ema.decay)


def ema_params(params: NetworkParams, ema: EmaParams) -> NetworkParams:
    """A parameter set carrying the EMA shadow weights (for inference)."""
    out = params.copy()
    out.layers = {k: v.copy() for k, v in ema.shadow.items()}
    return out


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    """Write a versioned JSON checkpoint (layer name, shape, row-major values)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "input_dim": params.input_dim,
        "cond_dim": params.cond_dim,
        "hidden": params.hidden,
        "blocks": params.blocks,
        "embed_dim": params.embed_dim,
        "time_freqs": params.time_freqs,
        "layers": [
            {"name": name, "shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in params.layers.items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> NetworkParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(
            f"unsupported checkpoint format {doc.get('format')!r} in {path}"
        )
    layers = {
        entry["name"]: np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
        for entry in doc["layers"]
    }
    return NetworkParams(
        input_dim=doc["input_dim"],
        cond_dim=doc["cond_dim"],
        hidden=doc["hidden"],
        blocks=doc["blocks"],
        embed_dim=doc["embed_dim"],
        time_freqs=doc["time_freqs"],
        layers=layers,
    )
