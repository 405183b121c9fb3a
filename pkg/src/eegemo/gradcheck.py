"""Finite-difference check of the analytic gradients on a tiny 64-bit rig."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import ModelConfig, dropout_masks, init_params, model_backward, model_forward
from .prng import Xoshiro256

RIG_CONFIG = ModelConfig(
    input_dim=2, seq_len=3, bilstm_units=4, lstm_units=(6, 3, 3, 2),
    dropout_rates=(0.25, 0.25, 0.25, 0.25, 0.2), dense_units=5, n_classes=9,
)
RIG_BATCH = 2
FD_STEP = 1e-5
TOLERANCE = 1e-4
# relative error denominators never drop below this, so gradients that are
# numerically zero on both routes do not produce 0/0 noise
REL_FLOOR = 1e-8


def mean_cross_entropy(probs, targets) -> float:
    picked = np.sum(probs * targets, axis=1)
    return float(-np.mean(np.log(np.maximum(picked, 1e-12))))


@dataclass
class GradcheckReport:
    per_block: dict
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE

    def lines(self) -> list[str]:
        out = [f"{name:16s} max rel err {err:.3e}" for name, err in self.per_block.items()]
        out.append(f"{'overall':16s} max rel err {self.max_error:.3e} "
                   f"({'PASS' if self.passed else 'FAIL'}, tol {TOLERANCE:g})")
        return out


def build_rig(seed: int, cfg: ModelConfig = RIG_CONFIG, batch: int = RIG_BATCH):
    # unit-scale normal weights and biases rather than Glorot: keeps gradients
    # of the deep 2-3 unit stack well scaled, and nonzero dense biases keep
    # ReLU inputs off the kink when dropout zeroes a whole row
    rng = Xoshiro256(seed)
    params = {
        name: rng.normal(theta.size).reshape(theta.shape)
        for name, theta in init_params(cfg, seed, dtype=np.float64).items()
    }
    x = rng.normal(batch * cfg.seq_len * cfg.input_dim).reshape(batch, cfg.seq_len, cfg.input_dim)
    classes = [int(rng.bounded(cfg.n_classes)) for _ in range(batch)]
    y = np.eye(cfg.n_classes)[classes]
    masks = dropout_masks(cfg, batch, cfg.seq_len, seed + 2, dtype=np.float64)
    return params, x, y, masks


def run_gradcheck(seed: int = 0, cfg: ModelConfig = RIG_CONFIG, batch: int = RIG_BATCH,
                  grad_hook=None) -> GradcheckReport:
    """Compare analytic and central-difference gradients for every parameter.

    ``grad_hook`` may rewrite the analytic gradients before comparison
    (negative-control testing).
    """
    params, x, y, masks = build_rig(seed, cfg, batch)
    probs, cache = model_forward(x, params, cfg, masks)
    grads = model_backward(cache, y, params, cfg)
    if grad_hook is not None:
        grads = grad_hook(grads)

    # the oracle runs in extended precision: a float64 central difference
    # carries ~eps*loss/(2h) = 3e-11 round-off, as large as many early-layer
    # gradient entries
    ext = np.longdouble
    p_ext = {k: v.astype(ext) for k, v in params.items()}
    x_ext, y_ext = x.astype(ext), y.astype(ext)
    m_ext = [None if m is None else m.astype(ext) for m in masks]
    step = ext(FD_STEP)

    def loss():
        probs = model_forward(x_ext, p_ext, cfg, m_ext, keep_cache=False)[0]
        return -np.mean(np.log(np.maximum(np.sum(probs * y_ext, axis=1), ext(1e-12))))

    per_block = {}
    for name, theta in p_ext.items():
        flat = theta.reshape(-1)
        numeric = np.empty(flat.size)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + step
            up = loss()
            flat[k] = old - step
            down = loss()
            flat[k] = old
            numeric[k] = float((up - down) / (2 * step))
        analytic = grads[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
        per_block[name] = float(np.max(np.abs(analytic - numeric) / denom))
    return GradcheckReport(per_block, max(per_block.values()))
