"""Loss, Adam, the mini-batch loop, evaluation metrics and checkpoints.

Determinism contract: each training batch is split into sub-batches of
``chunk_size`` samples. Sub-batch gradients are summed in ascending sub-batch
order, whether the sub-batches run serially or on a thread pool, so both
modes produce bitwise-identical trajectories.
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, parse_kv
from .data_model import N_CLASSES, FeatureDataset, LabelDim, SplitIndices, split_by_trial, split_indices
from .dsp import NormStats, zscore_apply, zscore_fit
from .errors import FormatError, NumericError, ShapeError, TooFewSamples
from .ingest import _read_bytes, _write_bytes
from .net import (
    ModelConfig,
    ModelParams,
    check_params,
    dropout_masks,
    init_params,
    model_backward,
    model_forward,
    param_count,
    param_shapes,
)
from .prng import Xoshiro256, derive_seed

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def cross_entropy(probs, targets) -> float:
    """Mean categorical cross-entropy, probabilities clamped at 1e-12."""
    probs, targets = np.asarray(probs), np.asarray(targets)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise ShapeError(f"probs {probs.shape} and targets {targets.shape} must match (B, C)")
    return float(np.mean(sample_losses(probs, targets)))


def sample_losses(probs, targets) -> np.ndarray:
    picked = np.sum(np.asarray(probs, np.float64) * np.asarray(targets, np.float64), axis=1)
    return -np.log(np.maximum(picked, PROB_FLOOR))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, **hyper) -> AdamState:
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState) -> ModelParams:
    """One bias-corrected Adam update; mutates ``state`` and returns new params."""
    if list(grads) != list(params) or list(state.m) != list(params):
        raise ShapeError("gradient / moment blocks do not match the parameters")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != param shape {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {k}")
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for k, theta in params.items():
        g = grads[k]
        dt = theta.dtype.type
        m = state.m[k] = dt(state.beta1) * state.m[k] + dt(1.0 - state.beta1) * g
        v = state.v[k] = dt(state.beta2) * state.v[k] + dt(1.0 - state.beta2) * (g * g)
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        out[k] = theta - dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps))
    return out


def clip_by_global_norm(grads: ModelParams, max_norm: float) -> ModelParams:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: (g * g.dtype.type(scale)) for k, g in grads.items()}


def batch_gradients(x, y, params, cfg: ModelConfig, masks, chunk_size: int, pool=None):
    """Gradients of the batch-mean loss, plus train-mode probabilities."""
    n = x.shape[0]
    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]

    def run(bound):
        a, b = bound
        sub_masks = [None if m is None else m[a:b] for m in masks]
        probs, cache = model_forward(x[a:b], params, cfg, sub_masks)
        return probs, model_backward(cache, y[a:b], params, cfg, batch_total=n)

    results = list(pool.map(run, bounds)) if pool is not None else [run(b) for b in bounds]
    grads = dict(results[0][1])
    for _, g in results[1:]:
        for k in grads:
            grads[k] = grads[k] + g[k]
    probs = np.concatenate([r[0] for r in results], axis=0)
    return grads, probs


@dataclass
class Trainer:
    """Mutable training state for one model."""

    params: ModelParams
    model_cfg: ModelConfig
    run: RunConfig
    adam: AdamState
    epoch: int = 0

    @classmethod
    def create(cls, model_cfg: ModelConfig, run: RunConfig) -> Trainer:
        params = init_params(model_cfg, run.init_seed)
        adam = AdamState.zeros_like(params, lr=run.lr, beta1=run.beta1, beta2=run.beta2, eps=run.adam_eps)
        return cls(params, model_cfg, run, adam)


@dataclass
class EpochResult:
    loss: float
    accuracy: float


def train_epoch(trainer: Trainer, features, targets, train_idx) -> EpochResult:
    """Shuffle, then forward / backward / Adam over every (possibly short) batch."""
    train_idx = np.asarray(train_idx)
    if train_idx.size == 0:
        raise TooFewSamples("empty training split")
    run, cfg = trainer.run, trainer.model_cfg
    epoch = trainer.epoch
    order = train_idx[Xoshiro256(derive_seed(run.shuffle_seed, epoch)).permutation(train_idx.size)]
    dtype = next(iter(trainer.params.values())).dtype
    loss_sum, correct = 0.0, 0
    pool = ThreadPoolExecutor(max_workers=run.threads) if run.threads > 1 else None
    try:
        for b, start in enumerate(range(0, order.size, run.batch_size)):
            idx = order[start : start + run.batch_size]
            x = np.asarray(features[idx], dtype=dtype)
            y = np.asarray(targets[idx], dtype=dtype)
            masks = dropout_masks(cfg, len(idx), x.shape[1], derive_seed(run.dropout_seed, epoch, b), dtype)
            grads, probs = batch_gradients(x, y, trainer.params, cfg, masks, run.chunk_size, pool)
            if run.clip_norm > 0:
                grads = clip_by_global_norm(grads, run.clip_norm)
            trainer.params = adam_step(trainer.params, grads, trainer.adam)
            loss_sum += float(np.sum(sample_losses(probs, y)))
            correct += int(np.sum(np.argmax(probs, axis=1) == np.argmax(y, axis=1)))
    finally:
        if pool is not None:
            pool.shutdown()
    trainer.epoch += 1
    return EpochResult(loss_sum / order.size, correct / order.size)


def predict_proba(params, cfg: ModelConfig, features, batch_size: int = 256) -> np.ndarray:
    dtype = next(iter(params.values())).dtype
    out = []
    for s in range(0, len(features), batch_size):
        x = np.asarray(features[s : s + batch_size], dtype=dtype)
        out.append(model_forward(x, params, cfg)[0])
    if not out:
        return np.zeros((0, cfg.n_classes), dtype)
    return np.concatenate(out, axis=0)


@dataclass
class Metrics:
    accuracy: float
    loss: float
    confusion: np.ndarray  # rows true class, columns predicted
    precision: np.ndarray = field(default=None)
    recall: np.ndarray = field(default=None)

    @classmethod
    def from_predictions(cls, true, pred, loss: float = float("nan")) -> Metrics:
        true, pred = np.asarray(true, np.int64), np.asarray(pred, np.int64)
        conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        np.add.at(conf, (true, pred), 1)
        diag = np.diag(conf).astype(np.float64)
        col, row = conf.sum(axis=0), conf.sum(axis=1)
        # 0/0 is reported as 0
        precision = np.divide(diag, col, out=np.zeros(N_CLASSES), where=col > 0)
        recall = np.divide(diag, row, out=np.zeros(N_CLASSES), where=row > 0)
        accuracy = float(np.trace(conf) / conf.sum()) if conf.sum() else 0.0
        return cls(accuracy, loss, conf, precision, recall)

    def report(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"accuracy {self.accuracy:.4f}  mean loss {self.loss:.4f}  n={int(self.confusion.sum())}")
        lines.append("confusion (rows true rating 1-9, columns predicted 1-9):")
        lines.append("      " + "".join(f"{k:>6d}" for k in range(1, N_CLASSES + 1)))
        for k, row in enumerate(self.confusion):
            lines.append(f"{k + 1:>6d}" + "".join(f"{v:>6d}" for v in row))
        lines.append("precision " + " ".join(f"{p:.3f}" for p in self.precision))
        lines.append("recall    " + " ".join(f"{r:.3f}" for r in self.recall))
        return "\n".join(lines)


def evaluate(params, cfg: ModelConfig, features, classes, indices, batch_size: int = 256) -> Metrics:
    """Inference-mode metrics on ``indices``; argmax ties go to the lowest class."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise TooFewSamples("cannot evaluate on an empty index set")
    probs = predict_proba(params, cfg, features[indices], batch_size)
    true = np.asarray(classes)[indices]
    loss = float(np.mean(sample_losses(probs, np.eye(N_CLASSES)[true])))
    return Metrics.from_predictions(true, np.argmax(probs, axis=1), loss)


def vote_per_trial(params, cfg: ModelConfig, features, classes, trial_index, indices,
                   batch_size: int = 256) -> Metrics:
    """Majority vote of window predictions within each trial (ties to lowest class)."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise TooFewSamples("cannot evaluate on an empty index set")
    pred = np.argmax(predict_proba(params, cfg, features[indices], batch_size), axis=1)
    trials = np.asarray(trial_index)[indices]
    true_t, pred_t = [], []
    for tr in np.unique(trials):
        sel = trials == tr
        true_t.append(int(np.asarray(classes)[indices][sel][0]))
        pred_t.append(int(np.argmax(np.bincount(pred[sel], minlength=N_CLASSES))))
    return Metrics.from_predictions(true_t, pred_t)


def make_split(ds: FeatureDataset, run: RunConfig) -> SplitIndices:
    if run.split_unit == "trial":
        return split_by_trial(ds.trial_index, run.train_fraction, run.split_seed)
    return split_indices(ds.n_samples, run.train_fraction, run.split_seed)


def fit_norm(features, train_idx) -> NormStats:
    stats = zscore_fit(np.asarray(features)[train_idx])
    # rounded through f32 so the stats stored in checkpoints reproduce exactly
    return NormStats(stats.mean.astype(np.float32).astype(np.float64),
                     stats.std.astype(np.float32).astype(np.float64))


@dataclass
class FitResult:
    params: ModelParams
    model_cfg: ModelConfig
    run: RunConfig
    stats: NormStats
    split: SplitIndices
    metrics: Metrics
    best_epoch: int
    history: list  # (epoch, split, loss, accuracy)
    adam: AdamState


def fit(ds: FeatureDataset, run: RunConfig, on_epoch=None) -> FitResult:
    """Split, normalise with train statistics, train, keep the best test epoch."""
    dim = run.label_dim
    split = make_split(ds, run)
    if split.train.size == 0 or split.test.size == 0:
        raise TooFewSamples(f"split left {split.train.size} train / {split.test.size} test samples")
    stats = fit_norm(ds.features, split.train)
    feats = zscore_apply(ds.features, stats)
    targets = ds.targets(dim)
    classes = ds.class_indices(dim)
    model_cfg = run.model_config(ds.input_dim, ds.seq_len)
    trainer = Trainer.create(model_cfg, run)

    history = []
    best = None  # (accuracy, epoch, params)
    stale = 0
    for epoch in range(1, run.epochs + 1):
        res = train_epoch(trainer, feats, targets, split.train)
        history.append((epoch, "train", res.loss, res.accuracy))
        if epoch % run.eval_every == 0 or epoch == run.epochs:
            m = evaluate(trainer.params, model_cfg, feats, classes, split.test, run.batch_size)
            history.append((epoch, "test", m.loss, m.accuracy))
            log.info("epoch %d train loss %.4f test acc %.4f", epoch, res.loss, m.accuracy)
            if on_epoch is not None:
                on_epoch(epoch, res, m)
            if best is None or m.accuracy > best[0]:
                best = (m.accuracy, epoch, trainer.params)
                stale = 0
            else:
                stale += run.eval_every
            if run.patience and stale >= run.patience:
                log.info("early stop at epoch %d", epoch)
                break
    if run.final_epoch:
        params, best_epoch = trainer.params, trainer.epoch
    else:
        params, best_epoch = best[2], best[1]
    metrics = evaluate(params, model_cfg, feats, classes, split.test, run.batch_size)
    return FitResult(params, model_cfg, run, stats, split, metrics, best_epoch, history, trainer.adam)


# --- checkpoints -----------------------------------------------------------

CKPT_MAGIC = b"EMOC"
CKPT_VERSION = 1
FLAG_ADAM = 1
FLAG_STATS = 2
_CKPT_HEAD = struct.Struct("<4sHHI")


@dataclass
class Checkpoint:
    params: ModelParams
    model_cfg: ModelConfig
    run: RunConfig
    meta: dict  # extra key = value entries (test_accuracy, best_epoch, ...)
    stats: NormStats | None = None
    adam: AdamState | None = None


_MODEL_KEYS = ("input_dim", "seq_len")


def encode_checkpoint(ck: Checkpoint) -> bytes:
    check_params(ck.params, ck.model_cfg)
    lines = ck.run.dumps()
    lines += f"input_dim = {ck.model_cfg.input_dim}\nseq_len = {ck.model_cfg.seq_len}\n"
    lines += "".join(f"meta.{k} = {v}\n" for k, v in ck.meta.items())
    text = lines.encode("utf-8")
    flags = (FLAG_ADAM if ck.adam is not None else 0) | (FLAG_STATS if ck.stats is not None else 0)
    n = param_count(ck.model_cfg)
    parts = [_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, flags, len(text)), text, struct.pack("<I", n)]
    parts += [np.asarray(p, "<f4").tobytes() for p in ck.params.values()]
    if ck.stats is not None:
        width = ck.model_cfg.seq_len * ck.model_cfg.input_dim
        if ck.stats.mean.shape != (width,):
            raise ShapeError("norm stats do not match the model input size")
        parts += [struct.pack("<I", width), np.asarray(ck.stats.mean, "<f4").tobytes(),
                  np.asarray(ck.stats.std, "<f4").tobytes()]
    if ck.adam is not None:
        a = ck.adam
        parts.append(struct.pack("<Qdddd", a.t, a.lr, a.beta1, a.beta2, a.eps))
        parts += [np.asarray(a.m[k], "<f4").tobytes() for k in ck.params]
        parts += [np.asarray(a.v[k], "<f4").tobytes() for k in ck.params]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.off + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), "<f4").astype(np.float32)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic, version, flags, text_len = r.unpack("<4sHHI")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if flags & ~(FLAG_ADAM | FLAG_STATS):
        raise FormatError(f"unsupported checkpoint flags {flags:#x}")
    try:
        items = parse_kv(r.take(text_len).decode("utf-8"))
        meta = {k[5:]: v for k, v in items.items() if k.startswith("meta.")}
        dims = {k: int(items.pop(k)) for k in _MODEL_KEYS}
        for k in list(items):
            if k.startswith("meta."):
                del items[k]
        run = RunConfig.from_mapping(items)
        model_cfg = run.model_config(dims["input_dim"], dims["seq_len"])
    except FormatError:
        raise
    except (UnicodeDecodeError, KeyError, ValueError) as e:
        raise FormatError(f"bad checkpoint config block: {e}") from None
    (n,) = r.unpack("<I")
    if n != param_count(model_cfg):
        raise FormatError(f"checkpoint holds {n} parameters, config implies {param_count(model_cfg)}")
    params = {name: r.floats(math.prod(shape)).reshape(shape) for name, shape in param_shapes(model_cfg)}
    stats = None
    if flags & FLAG_STATS:
        (width,) = r.unpack("<I")
        if width != model_cfg.seq_len * model_cfg.input_dim:
            raise FormatError("norm stats width does not match the model input size")
        stats = NormStats(r.floats(width).astype(np.float64), r.floats(width).astype(np.float64))
    adam = None
    if flags & FLAG_ADAM:
        t, lr, b1, b2, eps = r.unpack("<Qdddd")
        m = {name: r.floats(p.size).reshape(p.shape) for name, p in params.items()}
        v = {name: r.floats(p.size).reshape(p.shape) for name, p in params.items()}
        adam = AdamState(m, v, t, lr, b1, b2, eps)
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes after checkpoint payload")
    return Checkpoint(params, model_cfg, run, meta, stats, adam)


def save_checkpoint(path, ck: Checkpoint) -> None:
    _write_bytes(path, encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(_read_bytes(path))


def checkpoint_from_fit(res: FitResult, with_adam: bool = True) -> Checkpoint:
    meta = {
        "label_dim": res.run.label_dim.name.lower(),
        "best_epoch": str(res.best_epoch),
        "test_accuracy": repr(res.metrics.accuracy),
        "test_loss": repr(res.metrics.loss),
    }
    return Checkpoint(res.params, res.model_cfg, res.run, meta, res.stats,
                      res.adam if with_adam else None)


def label_dim_of(ck: Checkpoint) -> LabelDim:
    return LabelDim.parse(ck.meta.get("label_dim", ck.run.label_dim.name))
