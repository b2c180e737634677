"""BiLSTM classifier with hand-written backpropagation through time.

Architecture: BiLSTM(hidden) -> dropout -> BiLSTM(hidden) -> mean over time
-> dense(fc_dim, tanh) -> dropout -> dense(1, sigmoid).

Chunks are ``(input_dim, T)`` matrices (features on rows, frames on columns),
or ``(B, input_dim, T)`` stacks. Internally everything runs time-major,
``(T, B, features)``, so each recurrence step is a single matmul per direction.

All parameters live in one flat vector; named arrays are views into it. The
optimizer works on ``params.flat`` directly and checkpoints serialize it in
layout order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import NumericalBlowup

PROB_CLAMP = 1e-7

CHECKPOINT_MAGIC = b"CVAM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Dims:
    input_dim: int = 192
    hidden: int = 128
    fc_dim: int = 64


def param_layout(dims: Dims) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed parameter order, shared by the flat vector and the checkpoint."""
    H = dims.hidden
    layout = []
    for layer, in_dim in (("lstm1", dims.input_dim), ("lstm2", 2 * H)):
        for direction in ("fwd", "bwd"):
            prefix = f"{layer}.{direction}"
            layout += [
                (f"{prefix}.Wx", (in_dim, 4 * H)),
                (f"{prefix}.Wh", (H, 4 * H)),
                (f"{prefix}.b", (4 * H,)),
            ]
    layout += [
        ("fc.W", (2 * H, dims.fc_dim)),
        ("fc.b", (dims.fc_dim,)),
        ("head.w", (dims.fc_dim,)),
        ("head.b", ()),
    ]
    return layout


def expected_param_count(dims: Dims) -> int:
    D, H, F = dims.input_dim, dims.hidden, dims.fc_dim
    lstm1 = 2 * 4 * H * (D + H + 1)
    lstm2 = 2 * 4 * H * (2 * H + H + 1)
    return lstm1 + lstm2 + 2 * H * F + F + F + 1


class NetworkParams:
    """Weights of the whole network, stored contiguously.

    Also used for gradients (same layout, same dims).
    """

    def __init__(self, dims: Dims = Dims(), flat: np.ndarray | None = None, dtype=np.float64):
        self.dims = dims
        n = expected_param_count(dims)
        if flat is None:
            flat = np.zeros(n, dtype=dtype)
        flat = np.ascontiguousarray(flat)
        if flat.ndim != 1 or flat.size != n:
            raise ValueError(f"expected {n} parameters for {dims}, got shape {flat.shape}")
        self.flat = flat
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in param_layout(dims):
            size = int(np.prod(shape)) if shape else 1
            self._views[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        assert offset == n

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def names(self) -> list[str]:
        return list(self._views)

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def dtype(self):
        return self.flat.dtype

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.dims, self.flat.copy())

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.dims, np.zeros_like(self.flat))

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.dims, self.flat.astype(dtype))

    def __repr__(self) -> str:
        return f"NetworkParams({self.dims}, n={self.size}, dtype={self.dtype})"


def init_params(dims: Dims = Dims(), seed: int | np.random.Generator = 0, dtype=np.float64) -> NetworkParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = NetworkParams(dims, dtype=dtype)
    H = dims.hidden
    for name, shape in param_layout(dims):
        view = params[name]
        if name.endswith(".Wx") or name.endswith(".Wh"):
            fan_in = params[name.rsplit(".", 1)[0] + ".Wx"].shape[0] + H
            view[...] = rng.uniform(-1, 1, shape) / np.sqrt(fan_in)
        elif name.endswith(".b") and name.startswith("lstm"):
            view[H:2 * H] = 1.0
        elif name == "fc.W":
            view[...] = rng.uniform(-1, 1, shape) / np.sqrt(shape[0])
        elif name == "head.w":
            view[...] = rng.uniform(-1, 1, shape) / np.sqrt(shape[0])
    return params


def mirror_params(params: NetworkParams) -> NetworkParams:
    """Swap forward/backward directions everywhere.

    The layer-2 input rows and the dense-layer rows are permuted too, because
    the concatenated [forward, backward] halves trade places. On a
    time-reversed chunk the mirrored network yields the same probability.
    """
    H = params.dims.hidden
    out = params.copy()
    for layer in ("lstm1", "lstm2"):
        for part in ("Wx", "Wh", "b"):
            out[f"{layer}.fwd.{part}"][...] = params[f"{layer}.bwd.{part}"]
            out[f"{layer}.bwd.{part}"][...] = params[f"{layer}.fwd.{part}"]
    for direction in ("fwd", "bwd"):
        W = out[f"lstm2.{direction}.Wx"]
        W[...] = np.concatenate([W[H:], W[:H]], axis=0)
    W = out["fc.W"]
    W[...] = np.concatenate([W[H:], W[:H]], axis=0)
    return out


# ---------------------------------------------------------------- checkpoint

def save_checkpoint(params: NetworkParams, path) -> None:
    """Binary layout: magic, u32 version, u32 input/hidden/fc dims,
    u64 count, then ``count`` little-endian float64 values in layout order."""
    d = params.dims
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIIIQ", CHECKPOINT_VERSION, d.input_dim, d.hidden, d.fc_dim, params.size
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, D, H, F, n = struct.unpack_from("<IIIIQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    dims = Dims(D, H, F)
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=28).astype(np.float64)
    return NetworkParams(dims, flat)


# ------------------------------------------------------------------- layers

def _lstm_forward(x, Wx, Wh, b, reverse):
    """One direction. x: (T, B, D). Returns hidden states (T, B, H) and cache."""
    T, B, _ = x.shape
    H = Wh.shape[0]
    xp = x @ Wx
    xp += b
    gates = np.empty((T, B, 4 * H), dtype=x.dtype)
    cs = np.empty((T, B, H), dtype=x.dtype)
    hs = np.empty((T, B, H), dtype=x.dtype)
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        a = xp[t]
        a += h @ Wh
        g = gates[t]
        expit(a, out=g)
        np.tanh(a[:, 2 * H:3 * H], out=g[:, 2 * H:3 * H])
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
        cs[t] = c
        h = g[:, 3 * H:] * np.tanh(c)
        hs[t] = h
    return hs, (gates, cs, hs)


def _shift(arr, reverse):
    """Previous-step states: arr[t-1] (or arr[t+1] when reverse), zero at the edge."""
    out = np.zeros_like(arr)
    if reverse:
        out[:-1] = arr[1:]
    else:
        out[1:] = arr[:-1]
    return out


def _lstm_backward(dhs, x, Wx, Wh, cache, reverse):
    gates, cs, hs = cache
    T, B, H = hs.shape
    dxp = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=x.dtype)
    dc_next = np.zeros((B, H), dtype=x.dtype)
    c_prevs = _shift(cs, reverse)
    for t in (range(T) if reverse else range(T - 1, -1, -1)):
        g = gates[t]
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dxp[t]
        da[:, :H] = dc * gg * i * (1.0 - i)
        da[:, H:2 * H] = dc * c_prevs[t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ Wh.T
    h_prevs = _shift(hs, reverse)
    flat_da = dxp.reshape(T * B, 4 * H)
    dWx = x.reshape(T * B, -1).T @ flat_da
    dWh = h_prevs.reshape(T * B, H).T @ flat_da
    db = flat_da.sum(axis=0)
    dx = dxp @ Wx.T
    return dx, dWx, dWh, db


def _bilstm_forward(params, layer, x):
    hf, cf = _lstm_forward(x, params[f"{layer}.fwd.Wx"], params[f"{layer}.fwd.Wh"], params[f"{layer}.fwd.b"], False)
    hb, cb = _lstm_forward(x, params[f"{layer}.bwd.Wx"], params[f"{layer}.bwd.Wh"], params[f"{layer}.bwd.b"], True)
    return np.concatenate([hf, hb], axis=2), (cf, cb)


def _bilstm_backward(params, grads, layer, dout, x, caches):
    H = params.dims.hidden
    dx = None
    for direction, dh, cache, reverse in (
        ("fwd", dout[:, :, :H], caches[0], False),
        ("bwd", dout[:, :, H:], caches[1], True),
    ):
        p = f"{layer}.{direction}"
        dxi, dWx, dWh, db = _lstm_backward(dh, x, params[p + ".Wx"], params[p + ".Wh"], cache, reverse)
        grads[p + ".Wx"][...] = dWx
        grads[p + ".Wh"][...] = dWh
        grads[p + ".b"][...] = db
        dx = dxi if dx is None else dx + dxi
    return dx


# ------------------------------------------------------------------ network

@dataclass
class ForwardCache:
    x: np.ndarray
    lstm1: tuple
    lstm1_out: np.ndarray
    mask1: np.ndarray | None
    lstm2_in: np.ndarray
    lstm2: tuple
    T: int
    pooled: np.ndarray
    fc_act: np.ndarray
    mask2: np.ndarray | None
    fc_out: np.ndarray
    prob: np.ndarray
    single: bool
    logit: np.ndarray | None = None


def _as_time_major(chunk, dtype):
    arr = np.asarray(chunk, dtype=dtype)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] < 1:
        raise ValueError(f"chunk must be (features, T) or (B, features, T), got {np.shape(chunk)}")
    return np.ascontiguousarray(arr.transpose(2, 0, 1)), single


def _dropout_mask(rng, shape, rate, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def forward(params: NetworkParams, chunk, dropout_rate: float = 0.0, rng=None):
    """Probability of the positive class for one chunk or a stack of chunks.

    ``rng`` is a seed or ``np.random.Generator``; ``None`` selects inference
    mode (no dropout). Returns ``(prob, cache)``; ``prob`` is a float for a
    single ``(features, T)`` chunk, otherwise a ``(B,)`` array.
    """
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must be in [0, 1)")
    x, single = _as_time_major(chunk, params.dtype)
    if x.shape[2] != params.dims.input_dim:
        raise ValueError(f"expected {params.dims.input_dim} feature rows, got {x.shape[2]}")
    training = rng is not None and dropout_rate > 0.0
    if rng is not None and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    out1, c1 = _bilstm_forward(params, "lstm1", x)
    mask1 = _dropout_mask(rng, out1.shape, dropout_rate, x.dtype) if training else None
    in2 = out1 * mask1 if training else out1
    out2, c2 = _bilstm_forward(params, "lstm2", in2)
    T = x.shape[0]
    pooled = out2.mean(axis=0)
    act = np.tanh(pooled @ params["fc.W"] + params["fc.b"])
    mask2 = _dropout_mask(rng, act.shape, dropout_rate, x.dtype) if training else None
    fc_out = act * mask2 if training else act
    logit = fc_out @ params["head.w"] + params["head.b"]
    if not np.all(np.isfinite(logit)):
        raise NumericalBlowup("non-finite logit in forward pass")
    prob = np.clip(expit(logit), PROB_CLAMP, 1.0 - PROB_CLAMP)
    cache = ForwardCache(x, c1, out1, mask1, in2, c2, T, pooled, act, mask2, fc_out, prob, single, logit)
    return (float(prob[0]) if single else prob), cache


def predict(params: NetworkParams, chunks, block: int = 256) -> np.ndarray:
    """Inference-mode probabilities for a ``(B, features, T)`` stack, in blocks."""
    chunks = np.asarray(chunks)
    out = np.empty(len(chunks), dtype=np.float64)
    for start in range(0, len(chunks), block):
        p, _ = forward(params, chunks[start:start + block])
        out[start:start + block] = p
    return out


def bce_loss(prob, label) -> float:
    p = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


_LOGIT_CLAMP = float(np.log((1.0 - PROB_CLAMP) / PROB_CLAMP))


def bce_from_logits(logit, label) -> float:
    """Same value as ``bce_loss(expit(logit), label)``, computed without forming
    ``1 - p``, which loses digits when p is close to 1."""
    z = np.clip(np.asarray(logit, dtype=np.float64), -_LOGIT_CLAMP, _LOGIT_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def backward(params: NetworkParams, chunk, label, cache: ForwardCache):
    """Mean BCE over the batch and its exact gradient w.r.t. every parameter.

    ``chunk`` is accepted for signature symmetry; the cached inputs are used.
    """
    prob = cache.prob
    y = np.broadcast_to(np.asarray(label, dtype=prob.dtype), prob.shape)
    B = prob.shape[0]
    loss = bce_loss(prob, y)
    grads = params.zeros_like()

    dlogit = (prob - y) / B
    grads["head.w"][...] = cache.fc_out.T @ dlogit
    grads["head.b"][...] = dlogit.sum()
    dfc_out = np.outer(dlogit, params["head.w"])
    dact = dfc_out * cache.mask2 if cache.mask2 is not None else dfc_out
    dz = dact * (1.0 - cache.fc_act ** 2)
    grads["fc.W"][...] = cache.pooled.T @ dz
    grads["fc.b"][...] = dz.sum(axis=0)
    dpooled = dz @ params["fc.W"].T
    dout2 = np.broadcast_to(dpooled / cache.T, (cache.T,) + dpooled.shape)
    din2 = _bilstm_backward(params, grads, "lstm2", dout2, cache.lstm2_in, cache.lstm2)
    dout1 = din2 * cache.mask1 if cache.mask1 is not None else din2
    _bilstm_backward(params, grads, "lstm1", dout1, cache.x, cache.lstm1)
    if not np.all(np.isfinite(grads.flat)):
        raise NumericalBlowup("non-finite gradient")
    return loss, grads


def loss_and_grad(params, chunks, labels, dropout_rate=0.0, rng=None):
    _, cache = forward(params, chunks, dropout_rate, rng)
    return backward(params, chunks, labels, cache)


# --------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    n_checked: int
    n_skipped: int
    passed: bool


def grad_check(params: NetworkParams, chunk, label, tolerance: float = 1e-4,
               h: float = 1e-5, dropout_rate: float = 0.0, seed: int | None = None,
               grads: NetworkParams | None = None) -> GradCheckReport:
    """Compare analytic gradients against central differences, coordinate by coordinate.

    With ``dropout_rate > 0`` the same ``seed`` regenerates identical masks
    for every perturbed evaluation. ``grads`` overrides the analytic gradient
    (used to confirm the check catches corrupted gradients).
    """
    params = params.astype(np.float64)
    if grads is None:
        _, grads = loss_and_grad(params, chunk, label, dropout_rate, seed)

    def loss_at(p):
        _, cache = forward(p, chunk, dropout_rate, seed)
        return bce_from_logits(cache.logit, label)

    names = []
    for name in params.names():
        names += [name] * params[name].size
    worst, worst_i, skipped = 0.0, -1, 0
    probe = params.copy()
    for k in range(params.size):
        orig = probe.flat[k]
        probe.flat[k] = orig + h
        up = loss_at(probe)
        probe.flat[k] = orig - h
        down = loss_at(probe)
        probe.flat[k] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads.flat[k]
        if abs(numeric) < 1e-10 and abs(analytic) < 1e-10:
            skipped += 1
            continue
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
        if rel > worst:
            worst, worst_i = rel, k
    return GradCheckReport(
        max_rel_error=worst,
        worst_param=names[worst_i] if worst_i >= 0 else "",
        worst_index=worst_i,
        n_checked=params.size - skipped,
        n_skipped=skipped,
        passed=worst < tolerance,
    )
