"""Sequence classifier built from scratch on numpy.

Layer stack (defaults)::

    BiLSTM(128, concat) -> Dropout(0.6)
    LSTM(256) -> Dropout(0.6)
    LSTM(64)  -> Dropout(0.6)
    LSTM(64)  -> Dropout(0.6)
    LSTM(32, last step only) -> Dropout(0.4)
    Dense(16, ReLU) -> Dense(9, softmax)

LSTM kernels store the gates as column blocks in the order (i, f, g, o):
``z = x @ W + h_prev @ U + b``. Dense layers compute ``x @ W + b``.
Parameters live in an insertion-ordered ``dict`` whose order is the stack
order above (forward direction before backward for the BiLSTM, then W, U, b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArg, ShapeError, StateError
from .prng import Xoshiro256, derive_seed

ModelParams = dict  # name -> ndarray, canonical order


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 1
    seq_len: int = 70
    bilstm_units: int = 128
    lstm_units: tuple[int, ...] = (256, 64, 64, 32)
    dropout_rates: tuple[float, ...] = (0.6, 0.6, 0.6, 0.6, 0.4)
    dense_units: int = 16
    n_classes: int = 9

    def __post_init__(self):
        object.__setattr__(self, "lstm_units", tuple(int(u) for u in self.lstm_units))
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        if not self.lstm_units:
            raise InvalidArg("at least one unidirectional LSTM layer is required")
        if len(self.dropout_rates) != 1 + len(self.lstm_units):
            raise InvalidArg(
                f"need {1 + len(self.lstm_units)} dropout rates (one per recurrent layer), "
                f"got {len(self.dropout_rates)}"
            )
        for r in self.dropout_rates:
            if not 0.0 <= r < 1.0:
                raise InvalidArg(f"dropout rate {r} outside [0, 1)")
        dims = (self.input_dim, self.seq_len, self.bilstm_units, self.dense_units, self.n_classes)
        if min(dims + self.lstm_units) < 1:
            raise InvalidArg("all sizes must be >= 1")


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []

    def lstm(name, d, h):
        shapes.extend([(f"{name}.W", (d, 4 * h)), (f"{name}.U", (h, 4 * h)), (f"{name}.b", (4 * h,))])

    lstm("bilstm_fwd", cfg.input_dim, cfg.bilstm_units)
    lstm("bilstm_bwd", cfg.input_dim, cfg.bilstm_units)
    d = 2 * cfg.bilstm_units
    for j, h in enumerate(cfg.lstm_units):
        lstm(f"lstm{j}", d, h)
        d = h
    shapes += [("dense.W", (d, cfg.dense_units)), ("dense.b", (cfg.dense_units,))]
    shapes += [("out.W", (cfg.dense_units, cfg.n_classes)), ("out.b", (cfg.n_classes,))]
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for _, s in param_shapes(cfg))


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform kernels drawn in canonical order; zero biases, forget bias 1."""
    rng = Xoshiro256(seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".b"):
            b = np.zeros(shape)
            if not name.startswith(("dense", "out")):
                h = shape[0] // 4
                b[h : 2 * h] = 1.0
            params[name] = b.astype(dtype)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            u = rng.uniform(math.prod(shape)).reshape(shape)
            params[name] = ((2.0 * u - 1.0) * limit).astype(dtype)
    return params


def check_params(params: ModelParams, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if [n for n, _ in expected] != list(params):
        raise ShapeError("parameter blocks do not match the model config")
    for name, shape in expected:
        if params[name].shape != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class CellCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray  # activated i, f, g, o
    tanh_c: np.ndarray


def lstm_cell_forward(x_t, h_prev, c_prev, W, U, b):
    """One LSTM step for a batch; returns ``(h, c, cache)``."""
    x_t, h_prev, c_prev = np.atleast_2d(x_t), np.atleast_2d(h_prev), np.atleast_2d(c_prev)
    hidden = U.shape[0]
    if (W.shape[1] != 4 * hidden or U.shape[1] != 4 * hidden or b.shape != (4 * hidden,)
            or x_t.shape[1] != W.shape[0] or h_prev.shape[1] != hidden
            or c_prev.shape != h_prev.shape):
        raise ShapeError("lstm cell shape mismatch")
    z = x_t @ W + h_prev @ U + b
    gates = np.concatenate(
        [sigmoid(z[:, : 2 * hidden]), np.tanh(z[:, 2 * hidden : 3 * hidden]),
         sigmoid(z[:, 3 * hidden :])], axis=1,
    )
    i, f, g, o = np.split(gates, 4, axis=1)
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, CellCache(x_t, h_prev, c_prev, gates, tanh_c)


@dataclass
class LayerCache:
    xs: np.ndarray       # inputs in processing order (B, T, d)
    h_prev: np.ndarray   # (T, B, H)
    c_prev: np.ndarray   # (T, B, H)
    gates: np.ndarray    # (T, B, 4H)
    tanh_c: np.ndarray   # (T, B, H)
    reverse: bool
    return_sequences: bool


def lstm_layer_forward(x, W, U, b, reverse: bool = False, return_sequences: bool = True):
    """Run an LSTM over ``x`` (B, T, d) from a zero state.

    ``reverse`` iterates from the last step and re-reverses the output, so
    ``out[:, t]`` is always aligned with ``x[:, t]``. Without
    ``return_sequences`` only the final processed state (B, H) is returned.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected (batch, time, dim) input, got {x.shape}")
    n_b, n_t, d = x.shape
    if n_t < 1:
        raise InvalidArg("sequence length must be >= 1")
    hidden = U.shape[0]
    if W.shape != (d, 4 * hidden) or U.shape != (hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeError(f"lstm params {W.shape}/{U.shape}/{b.shape} do not fit input dim {d}")
    dtype = W.dtype
    xs = x[:, ::-1] if reverse else x
    xs = np.ascontiguousarray(xs, dtype=dtype)
    xw = xs @ W + b
    h = np.zeros((n_b, hidden), dtype)
    c = np.zeros((n_b, hidden), dtype)
    hs = np.empty((n_t, n_b, hidden), dtype)
    cs = np.empty((n_t, n_b, hidden), dtype)
    gates = np.empty((n_t, n_b, 4 * hidden), dtype)
    tanh_cs = np.empty((n_t, n_b, hidden), dtype)
    for t in range(n_t):
        hs[t], cs[t] = h, c
        z = xw[:, t] + h @ U
        gt = gates[t]
        gt[:, : 2 * hidden] = sigmoid(z[:, : 2 * hidden])
        gt[:, 2 * hidden : 3 * hidden] = np.tanh(z[:, 2 * hidden : 3 * hidden])
        gt[:, 3 * hidden :] = sigmoid(z[:, 3 * hidden :])
        c = gt[:, hidden : 2 * hidden] * c + gt[:, :hidden] * gt[:, 2 * hidden : 3 * hidden]
        tanh_cs[t] = np.tanh(c)
        h = gt[:, 3 * hidden :] * tanh_cs[t]
    cache = LayerCache(xs, hs, cs, gates, tanh_cs, reverse, return_sequences)
    if not return_sequences:
        return h, cache
    out = np.concatenate([hs[1:], h[None]], axis=0).transpose(1, 0, 2)
    if reverse:
        out = out[:, ::-1]
    return np.ascontiguousarray(out), cache


def lstm_layer_backward(d_out, cache: LayerCache, W, U):
    """BPTT through one LSTM layer; returns ``(dx, dW, dU, db)``."""
    xs = cache.xs
    n_b, n_t, d = xs.shape
    hidden = U.shape[0]
    dtype = W.dtype
    if cache.return_sequences:
        dhs = d_out[:, ::-1] if cache.reverse else d_out
        dhs = np.ascontiguousarray(dhs.transpose(1, 0, 2), dtype=dtype)
    else:
        dhs = np.zeros((n_t, n_b, hidden), dtype)
        dhs[-1] = d_out
    dz = np.empty((n_t, n_b, 4 * hidden), dtype)
    dh_next = np.zeros((n_b, hidden), dtype)
    dc_next = np.zeros((n_b, hidden), dtype)
    for t in range(n_t - 1, -1, -1):
        gt = cache.gates[t]
        i, f = gt[:, :hidden], gt[:, hidden : 2 * hidden]
        g, o = gt[:, 2 * hidden : 3 * hidden], gt[:, 3 * hidden :]
        tc = cache.tanh_c[t]
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dzt = dz[t]
        dzt[:, :hidden] = dc * g * i * (1.0 - i)
        dzt[:, hidden : 2 * hidden] = dc * cache.c_prev[t] * f * (1.0 - f)
        dzt[:, 2 * hidden : 3 * hidden] = dc * i * (1.0 - g * g)
        dzt[:, 3 * hidden :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dzt @ U.T
    dz_flat = dz.reshape(n_t * n_b, 4 * hidden)
    dU = cache.h_prev.reshape(n_t * n_b, hidden).T @ dz_flat
    dW = xs.transpose(1, 0, 2).reshape(n_t * n_b, d).T @ dz_flat
    db = dz_flat.sum(axis=0)
    dxs = (dz @ W.T).transpose(1, 0, 2)
    dx = dxs[:, ::-1] if cache.reverse else dxs
    return np.ascontiguousarray(dx), dW, dU, db


def bilstm_forward(x, fwd, bwd):
    """Concatenate forward and reversed LSTM outputs per step: (B, T, 2H)."""
    if fwd[1].shape != bwd[1].shape:
        raise ShapeError("forward and backward hidden sizes differ")
    out_f, cache_f = lstm_layer_forward(x, *fwd, reverse=False)
    out_b, cache_b = lstm_layer_forward(x, *bwd, reverse=True)
    return np.concatenate([out_f, out_b], axis=-1), (cache_f, cache_b)


def dropout_mask(shape, rate: float, seed: int, dtype=np.float32):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArg(f"dropout rate must lie in [0, 1), got {rate}")
    keep = 1.0 - rate
    u = Xoshiro256(seed).uniform(math.prod(shape)).reshape(shape)
    return np.where(u < keep, 1.0 / keep, 0.0).astype(dtype)


def dropout(x, rate: float, mode: str = "train", seed: int = 0):
    if not 0.0 <= rate < 1.0:
        raise InvalidArg(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x)
    if mode == "inference" or rate == 0.0:
        return x
    if mode != "train":
        raise InvalidArg(f"unknown dropout mode {mode!r}")
    return x * dropout_mask(x.shape, rate, seed, x.dtype)


def dense(x, W, b, activation: str = "identity"):
    x = np.asarray(x)
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: input {x.shape} incompatible with W {W.shape}, b {b.shape}")
    y = x @ W + b
    if activation == "relu":
        return np.maximum(y, 0)
    if activation == "softmax":
        return softmax(y)
    if activation != "identity":
        raise InvalidArg(f"unknown activation {activation!r}")
    return y


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dropout_masks(cfg: ModelConfig, batch: int, seq_len: int, seed: int, dtype=np.float32):
    """Masks for every dropout position of one training batch.

    Position ``j`` uses the stream ``derive_seed(seed, j)``; masks are drawn
    for the whole batch so sub-batch slicing never changes them.
    """
    widths = [2 * cfg.bilstm_units] + list(cfg.lstm_units)
    masks = []
    for j, (rate, width) in enumerate(zip(cfg.dropout_rates, widths)):
        last = j == len(widths) - 1
        shape = (batch, width) if last else (batch, seq_len, width)
        masks.append(None if rate == 0.0 else dropout_mask(shape, rate, derive_seed(seed, j), dtype))
    return masks


@dataclass
class ForwardCache:
    masks: list
    bilstm: tuple
    lstm: list = field(default_factory=list)
    dense_in: np.ndarray | None = None
    dense_pre: np.ndarray | None = None
    out_in: np.ndarray | None = None
    probs: np.ndarray | None = None


def model_forward(x, params: ModelParams, cfg: ModelConfig, masks=None, keep_cache: bool = None):
    """Class probabilities (B, n_classes) for ``x`` (B, T, d).

    ``masks=None`` is inference mode (dropout is the identity); training
    passes the output of :func:`dropout_masks`. Returns ``(probs, cache)``,
    with ``cache`` None unless training.
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise ShapeError(f"expected input (B, T, {cfg.input_dim}), got {x.shape}")
    p = params
    if keep_cache is None:
        keep_cache = masks is not None
    if masks is None:
        masks = [None] * len(cfg.dropout_rates)

    def apply_mask(h, m):
        return h if m is None else h * m

    h, bi_cache = bilstm_forward(
        x,
        (p["bilstm_fwd.W"], p["bilstm_fwd.U"], p["bilstm_fwd.b"]),
        (p["bilstm_bwd.W"], p["bilstm_bwd.U"], p["bilstm_bwd.b"]),
    )
    h = apply_mask(h, masks[0])
    cache = ForwardCache(masks=masks, bilstm=bi_cache)
    n_layers = len(cfg.lstm_units)
    for j in range(n_layers):
        last = j == n_layers - 1
        h, lc = lstm_layer_forward(
            h, p[f"lstm{j}.W"], p[f"lstm{j}.U"], p[f"lstm{j}.b"], return_sequences=not last
        )
        cache.lstm.append(lc)
        h = apply_mask(h, masks[j + 1])
    cache.dense_in = h
    cache.dense_pre = h @ p["dense.W"] + p["dense.b"]
    cache.out_in = np.maximum(cache.dense_pre, 0)
    probs = softmax(cache.out_in @ p["out.W"] + p["out.b"])
    cache.probs = probs
    return probs, (cache if keep_cache else None)


def model_backward(cache: ForwardCache | None, targets, params: ModelParams, cfg: ModelConfig,
                   batch_total: int | None = None) -> ModelParams:
    """Gradients of mean cross-entropy for every parameter block.

    Uses the fused softmax/cross-entropy output gradient ``(p - y) / B`` where
    ``B`` is ``batch_total`` (the full batch size when called on a sub-batch).
    """
    if cache is None or cache.probs is None:
        raise StateError("model_backward needs a training-mode forward cache")
    p = params
    probs = cache.probs
    y = np.asarray(targets, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ShapeError(f"targets {y.shape} do not match probabilities {probs.shape}")
    n_total = probs.shape[0] if batch_total is None else batch_total
    g = {}

    d_logits = (probs - y) / probs.dtype.type(n_total)
    g["out.W"] = cache.out_in.T @ d_logits
    g["out.b"] = d_logits.sum(axis=0)
    d_hidden = (d_logits @ p["out.W"].T) * (cache.dense_pre > 0)
    g["dense.W"] = cache.dense_in.T @ d_hidden
    g["dense.b"] = d_hidden.sum(axis=0)
    dh = d_hidden @ p["dense.W"].T

    lstm_grads = []
    for j in range(len(cfg.lstm_units) - 1, -1, -1):
        m = cache.masks[j + 1]
        if m is not None:
            dh = dh * m
        dh, dW, dU, db = lstm_layer_backward(dh, cache.lstm[j], p[f"lstm{j}.W"], p[f"lstm{j}.U"])
        lstm_grads.append((j, dW, dU, db))
    if cache.masks[0] is not None:
        dh = dh * cache.masks[0]
    hidden = cfg.bilstm_units
    cf, cb = cache.bilstm
    _, dWf, dUf, dbf = lstm_layer_backward(dh[..., :hidden], cf, p["bilstm_fwd.W"], p["bilstm_fwd.U"])
    _, dWb, dUb, dbb = lstm_layer_backward(dh[..., hidden:], cb, p["bilstm_bwd.W"], p["bilstm_bwd.U"])

    grads = {
        "bilstm_fwd.W": dWf, "bilstm_fwd.U": dUf, "bilstm_fwd.b": dbf,
        "bilstm_bwd.W": dWb, "bilstm_bwd.U": dUb, "bilstm_bwd.b": dbb,
    }
    for j, dW, dU, db in sorted(lstm_grads, key=lambda t: t[0]):
        grads[f"lstm{j}.W"], grads[f"lstm{j}.U"], grads[f"lstm{j}.b"] = dW, dU, db
    grads.update(g)
    return {name: grads[name].astype(params[name].dtype, copy=False) for name in params}
