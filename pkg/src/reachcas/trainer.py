"""Fit ReLU networks to score-table slices with the asymmetric loss.

The loss penalizes overestimating a suboptimal advisory and underestimating
the optimal one much more than the opposite errors, so the network keeps the
table's best advisory on top even where it cannot match the scores exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .nnet import Network, evaluate

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (25, 25, 25, 25, 25)
    epochs: int = 3000
    batch_size: int = 512
    c: float = 40.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainResult:
    network: Network
    losses: list[float] = field(default_factory=list)


def _weights(e: np.ndarray, best_mask: np.ndarray, c: float, n: int) -> np.ndarray:
    """Per-entry multiplier k so each loss term is k*(e^2 + lin*|e|)."""
    over = e >= 0
    k = np.ones_like(e)
    k[~best_mask & over] = c
    k[best_mask & ~over] = c * (n - 1)
    return k


def _linear(e: np.ndarray, best_mask: np.ndarray) -> np.ndarray:
    """1 where the case carries the extra |e| term, else 0."""
    over = e >= 0
    return ((~best_mask & over) | (best_mask & ~over)).astype(e.dtype)


def _best_mask(best, shape) -> np.ndarray:
    best = np.asarray(best)
    mask = np.zeros(shape, dtype=bool)
    if mask.ndim == 1:
        mask[int(best)] = True
    else:
        mask[np.arange(shape[0]), best] = True
    return mask


def asymmetric_loss(e, best, c: float = 40.0, n: int | None = None) -> float:
    """Mean over actions (and records, for 2-D input) of the asymmetric loss."""
    e = np.asarray(e, dtype=np.float64)
    n = e.shape[-1] if n is None else n
    mask = _best_mask(best, e.shape)
    terms = _weights(e, mask, c, n) * (e * e + _linear(e, mask) * np.abs(e))
    return float(terms.mean())


def loss_gradient(pred, target, best, c: float = 40.0, n: int | None = None) -> np.ndarray:
    """Gradient of ``asymmetric_loss(pred - target, ...)`` with respect to ``pred``.

    The kink at e = 0 gets subgradient 0.
    """
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    n = e.shape[-1] if n is None else n
    mask = _best_mask(best, e.shape)
    g = _weights(e, mask, c, n) * (2 * e + _linear(e, mask) * np.sign(e))
    return g / e.size


def init_layers(sizes, rng):
    """Uniform weights scaled by fan-in, zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return ws, bs


def train(inputs, targets, cfg: TrainConfig = TrainConfig(), best=None, header: str = "",
          input_bounds: tuple | None = None) -> TrainResult:
    """Train on raw-unit ``inputs`` (records x inputs) and ``targets`` (records x actions).

    ``best`` defaults to the per-record argmax of ``targets`` (lowest index on
    ties). ``input_bounds`` overrides the declared (min, max) input range that
    is otherwise taken from the data.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("need a nonempty dataset with one target row per input row")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ValueError("dataset contains non-finite values")
    best = np.argmax(y, axis=1) if best is None else np.asarray(best)
    n_rec, n_out = y.shape

    lo, hi = (x.min(axis=0), x.max(axis=0)) if input_bounds is None else map(np.asarray, input_bounds)
    in_mean = x.mean(axis=0)
    in_range = np.where(hi - lo > 0, hi - lo, 1.0)
    out_mean = float(y.mean())
    out_range = float(y.max() - y.min()) or 1.0
    z = (x - in_mean) / in_range
    t = (y - out_mean) / out_range
    mask = _best_mask(best, y.shape)

    rng = np.random.default_rng(cfg.seed)
    sizes = [x.shape[1], *cfg.hidden, n_out]
    ws, bs = init_layers(sizes, rng)
    params = ws + bs
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    losses: list[float] = []
    n_layers = len(ws)
    # overflow shows up as a non-finite loss, reported below
    with threadpool_limits(1), np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n_rec)
            total = 0.0
            for start in range(0, n_rec, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                acts = [z[idx]]
                for i in range(n_layers):
                    pre = acts[-1] @ ws[i].T + bs[i]
                    acts.append(np.maximum(pre, 0.0) if i < n_layers - 1 else pre)
                e = acts[-1] - t[idx]
                bm = mask[idx]
                k = _weights(e, bm, cfg.c, n_out)
                lin = _linear(e, bm)
                total += float((k * (e * e + lin * np.abs(e))).sum())
                delta = k * (2 * e + lin * np.sign(e)) / e.size
                grads_w, grads_b = [None] * n_layers, [None] * n_layers
                for i in range(n_layers - 1, -1, -1):
                    grads_w[i] = delta.T @ acts[i]
                    grads_b[i] = delta.sum(axis=0)
                    if i:
                        delta = (delta @ ws[i]) * (acts[i] > 0)
                step += 1
                a_t = cfg.lr * np.sqrt(1 - cfg.beta2 ** step) / (1 - cfg.beta1 ** step)
                for p, g, mi, vi in zip(params, grads_w + grads_b, m, v):
                    mi *= cfg.beta1
                    mi += (1 - cfg.beta1) * g
                    vi *= cfg.beta2
                    vi += (1 - cfg.beta2) * g * g
                    p -= a_t * mi / (np.sqrt(vi) + cfg.eps)
            loss = total / (n_rec * n_out)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
            losses.append(loss)
            if epoch % 500 == 0:
                log.debug("epoch %d loss %.6g", epoch, loss)
    net = Network(ws, bs, lo, hi, in_mean, in_range, out_mean, out_range, header)
    return TrainResult(net, losses)


def policy_agreement(net: Network, inputs, targets) -> float:
    """Fraction of records where the network's argmax equals the table's."""
    pred = evaluate(net, np.asarray(inputs, dtype=np.float64))
    return float(np.mean(np.argmax(pred, axis=1) == np.argmax(np.asarray(targets), axis=1)))
