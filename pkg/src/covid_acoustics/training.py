"""Chunking, class-balanced sampling, Adam with L2, plateau schedule, fold training."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import model as nn
from .errors import EmptyClass, NumericalBlowup
from .features import FeatureMatrix
from .metrics import evaluate

log = logging.getLogger(__name__)

CHUNK_FRAMES = 51
CHUNK_STRIDE = 10


@dataclass(frozen=True)
class Chunk:
    values: np.ndarray  # (192, T)
    label: int
    source_id: str = ""


def chunk_array(values: np.ndarray, T: int = CHUNK_FRAMES, stride: int = CHUNK_STRIDE) -> np.ndarray:
    """Stack of ``(features, T)`` windows starting every ``stride`` frames.

    Matrices narrower than ``T`` are reflect-padded on the right to one chunk.
    """
    n = values.shape[1]
    if n < 1:
        raise ValueError("feature matrix has no frames")
    if n < T:
        if n == 1:
            values = np.repeat(values, T, axis=1)
        else:
            values = np.pad(values, ((0, 0), (0, T - n)), mode="reflect")
        return values[None].copy()
    starts = np.arange(0, n - T + 1, stride)
    return np.stack([values[:, s:s + T] for s in starts])


def make_chunks(feat: FeatureMatrix, label: int | None = None, T: int = CHUNK_FRAMES,
                stride: int = CHUNK_STRIDE) -> list[Chunk]:
    return [Chunk(c, label, feat.source_id) for c in chunk_array(feat.values, T, stride)]


class ChunkPool:
    """Training chunks grouped by label, then by file."""

    def __init__(self):
        self.files: dict[int, list[str]] = {0: [], 1: []}
        self.chunks: dict[str, np.ndarray] = {}

    def add(self, file_id: str, label: int, chunks: np.ndarray) -> None:
        if file_id in self.chunks:
            raise ValueError(f"duplicate file {file_id}")
        self.files[int(label)].append(file_id)
        self.chunks[file_id] = chunks

    @classmethod
    def from_features(cls, feats: dict[str, FeatureMatrix], labels: dict[str, int],
                      T: int = CHUNK_FRAMES, stride: int = CHUNK_STRIDE) -> "ChunkPool":
        pool = cls()
        for fid in sorted(feats):
            pool.add(fid, labels[fid], chunk_array(feats[fid].values, T, stride))
        return pool

    def n_chunks(self, label: int | None = None) -> int:
        labels = (0, 1) if label is None else (label,)
        return sum(len(self.chunks[f]) for y in labels for f in self.files[y])


def balanced_batch(pool: ChunkPool, batch_size: int = 1024, rng=None):
    """Half positive, half negative chunks; a file is drawn uniformly within its
    class, then a chunk uniformly within that file, with replacement.

    Returns ``(chunks, labels, file_ids)``: a ``(batch_size, features, T)``
    array, a ``(batch_size,)`` 0/1 array and the source file of each chunk.
    """
    if batch_size % 2:
        raise ValueError("batch_size must be even")
    rng = np.random.default_rng(rng)
    for y in (1, 0):
        if not pool.files[y]:
            raise EmptyClass(f"no {'COVID' if y else 'NonCOVID'} chunks in pool")
    half = batch_size // 2
    picked, labels, ids = [], [], []
    for y in (1, 0):
        files = pool.files[y]
        sizes = np.array([len(pool.chunks[f]) for f in files])
        which = rng.integers(0, len(files), half)
        within = rng.integers(0, sizes[which])
        for k, j in zip(which, within):
            picked.append(pool.chunks[files[k]][j])
            ids.append(files[k])
        labels += [y] * half
    return np.stack(picked), np.array(labels), ids


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    lr0: float
    step: int = 0
    reductions: int = 0
    best_loss: float = math.inf
    bad_epochs: int = 0
    patience: int = 3
    factor: float = 10.0
    floor: float = 1e-8
    min_delta: float = 1e-6

    @classmethod
    def create(cls, params: nn.NetworkParams, lr: float = 1e-4, **kw) -> "OptimizerState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), lr, **kw)

    @property
    def lr(self) -> float:
        return self.lr0 / self.factor ** self.reductions

    @property
    def at_floor(self) -> bool:
        return self.lr0 / self.factor ** (self.reductions + 1) < self.floor * (1 - 1e-9)


def adam_step(params: nn.NetworkParams, grads: nn.NetworkParams, state: OptimizerState,
              l2: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update on ``grad + l2 * params``; returns new (params, state)."""
    theta = params.flat
    g = grads.flat + l2 * theta
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * g
    v = beta2 * state.v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    new = theta - state.lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowup("non-finite parameters after Adam step")
    return nn.NetworkParams(params.dims, new), replace(state, m=m, v=v, step=step)


def plateau_scheduler(state: OptimizerState, epoch_val_loss: float) -> OptimizerState:
    """Divide the learning rate by ``factor`` after ``patience`` epochs without improvement."""
    if epoch_val_loss < state.best_loss - state.min_delta:
        return replace(state, best_loss=epoch_val_loss, bad_epochs=0)
    bad = state.bad_epochs + 1
    if bad < state.patience:
        return replace(state, bad_epochs=bad)
    if state.at_floor:
        return replace(state, bad_epochs=0)
    return replace(state, reductions=state.reductions + 1, bad_epochs=0)


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    lr: float = 1e-4
    l2: float = 1e-4
    dropout: float = 0.1
    max_epochs: int = 25
    batches_per_epoch: int = 0  # 0: enough batches to draw every training chunk once on average
    patience: int = 3
    lr_factor: float = 10.0
    lr_floor: float = 1e-8
    hidden: int = 128
    fc_dim: int = 64
    chunk_frames: int = CHUNK_FRAMES
    chunk_stride: int = CHUNK_STRIDE
    dtype: str = "float64"
    deterministic: bool = True

    def dims(self, input_dim: int) -> nn.Dims:
        return nn.Dims(input_dim, self.hidden, self.fc_dim)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key = value`` lines (``#`` comments) into a TrainConfig."""
    base = base or TrainConfig()
    types = {f.name: type(getattr(base, f.name)) for f in fields(TrainConfig)}
    updates = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if types[key] is bool:
            updates[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            updates[key] = types[key](value)
    return replace(base, **updates)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float
    lr: float


@dataclass
class TrainResult:
    params: nn.NetworkParams
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def score_chunks(params: nn.NetworkParams, chunks_by_file: dict[str, np.ndarray]) -> dict[str, float]:
    """Mean inference-mode probability per file."""
    ids = sorted(chunks_by_file)
    if not ids:
        return {}
    stacked = np.concatenate([chunks_by_file[f] for f in ids])
    probs = nn.predict(params, stacked.astype(params.dtype, copy=False))
    out, k = {}, 0
    for f in ids:
        n = len(chunks_by_file[f])
        out[f] = float(probs[k:k + n].mean())
        k += n
    return out


def validate(params, val_chunks: dict[str, np.ndarray], val_labels: dict[str, int]) -> tuple[float, float]:
    """(file-level BCE, file-level AUC) on a validation set."""
    scores = score_chunks(params, val_chunks)
    ids = sorted(scores)
    p = np.array([scores[i] for i in ids])
    y = np.array([val_labels[i] for i in ids])
    loss = nn.bce_loss(p, y)
    auc = evaluate(p, y).auc if 0 < y.sum() < len(y) else float("nan")
    return loss, auc


def _threadpool_guard(deterministic: bool):
    if not deterministic:
        from contextlib import nullcontext
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(1)


def train_model(train_feats: dict[str, FeatureMatrix], train_labels: dict[str, int],
                val_feats: dict[str, FeatureMatrix], val_labels: dict[str, int],
                config: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Train one classifier; keeps the parameters with the best validation AUC."""
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(seed)
    T, stride = config.chunk_frames, config.chunk_stride
    pool = ChunkPool.from_features(train_feats, train_labels, T, stride)
    val_chunks = {f: chunk_array(val_feats[f].values, T, stride) for f in sorted(val_feats)}
    input_dim = next(iter(train_feats.values())).values.shape[0]
    params = nn.init_params(config.dims(input_dim), rng, dtype=dtype)
    state = OptimizerState.create(params, config.lr, patience=config.patience,
                                  factor=config.lr_factor, floor=config.lr_floor)
    n_batches = config.batches_per_epoch or max(1, math.ceil(pool.n_chunks() / config.batch_size))

    with _threadpool_guard(config.deterministic):
        val_loss, val_auc = validate(params, val_chunks, val_labels)
        result = TrainResult(params.copy(), [EpochRecord(0, float("nan"), val_loss, val_auc, state.lr)], 0)
        best_auc = val_auc
        for epoch in range(1, config.max_epochs + 1):
            losses = []
            for _ in range(n_batches):
                x, y, _ = balanced_batch(pool, config.batch_size, rng)
                loss, grads = nn.loss_and_grad(params, x.astype(dtype, copy=False), y, config.dropout, rng)
                params, state = adam_step(params, grads, state, config.l2)
                losses.append(loss)
            lr_used = state.lr
            val_loss, val_auc = validate(params, val_chunks, val_labels)
            result.log.append(EpochRecord(epoch, float(np.mean(losses)), val_loss, val_auc, lr_used))
            log.info("epoch %d train %.4f val %.4f auc %.4f lr %.1e", epoch, np.mean(losses), val_loss, val_auc, lr_used)
            if val_auc > best_auc or (math.isnan(best_auc) and not math.isnan(val_auc)):
                best_auc = val_auc
                result.params = params.copy()
                result.best_epoch = epoch
            state = plateau_scheduler(state, val_loss)
            if state.at_floor and state.lr <= config.lr_floor * (1 + 1e-9):
                break
    return result


def train_fold(entries, folds: dict[str, int], fold_id: int, features: dict[str, FeatureMatrix],
               config: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Train on every fold but ``fold_id``, validate on ``fold_id``.

    ``entries`` should cover a single sound category; ``features`` maps
    file_id to its FeatureMatrix.
    """
    train = {e.file_id: e.label for e in entries if folds[e.subject_id] != fold_id}
    val = {e.file_id: e.label for e in entries if folds[e.subject_id] == fold_id}
    return train_model({f: features[f] for f in train}, train,
                       {f: features[f] for f in val}, val, config, seed)


def write_epoch_log(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_auc", "lr"])
        for r in records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_auc), repr(r.lr)])
