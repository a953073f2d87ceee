"""Sound advisory sets for input boxes via symbolic interval propagation.

Every neuron carries a lower and an upper affine function of the
(normalized) network input that bound its value everywhere in the box.
An advisory is dropped only when another advisory's score provably beats it
over the whole box; undecided boxes are bisected up to a split budget.

All routines are vectorized over a batch of boxes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .mdp import ContractError
from .nnet import Network, evaluate

log = logging.getLogger(__name__)

MARGIN = 1e-9
ACST_MAGIC = b"ACST"


@dataclass
class SymbolicBounds:
    """Affine bounds over normalized inputs, batched.

    ``lower``/``upper`` are (B, n, d + 1): coefficients then a constant column.
    """

    lower: np.ndarray
    upper: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def concrete(self) -> tuple[np.ndarray, np.ndarray]:
        return _affine_min(self.lower, self.lo, self.hi), _affine_max(self.upper, self.lo, self.hi)


def _affine_min(form, lo, hi):
    coef = form[..., :-1]
    return form[..., -1] + (np.maximum(coef, 0) @ lo[:, :, None])[..., 0] + (np.minimum(coef, 0) @ hi[:, :, None])[..., 0]


def _affine_max(form, lo, hi):
    coef = form[..., :-1]
    return form[..., -1] + (np.maximum(coef, 0) @ hi[:, :, None])[..., 0] + (np.minimum(coef, 0) @ lo[:, :, None])[..., 0]


def normalized_boxes(net: Network, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Clamp raw boxes (B, d) to the network's input range and normalize."""
    lo = np.atleast_2d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_2d(np.asarray(hi, dtype=np.float64))
    if lo.shape != hi.shape or lo.shape[1] != net.num_inputs:
        raise ContractError(f"boxes must be (B, {net.num_inputs})")
    if np.any(lo > hi):
        raise ContractError("box has lo > hi")
    return net.normalize(lo), net.normalize(hi)


def _affine_layer(w, bias, lower, upper):
    """Bounds of w @ z + bias given bounds of z."""
    wp, wn = np.maximum(w, 0), np.minimum(w, 0)
    new_lower = wp @ lower + wn @ upper
    new_upper = wp @ upper + wn @ lower
    new_lower[..., -1] += bias
    new_upper[..., -1] += bias
    return new_lower, new_upper


def _hidden_forms(net: Network, zlo, zhi):
    """Symbolic bounds of the last hidden layer's post-activations."""
    b, d = zlo.shape
    ident = np.zeros((b, d, d + 1))
    ident[:, np.arange(d), np.arange(d)] = 1.0
    lower, upper = ident, ident.copy()
    for w, bias in zip(net.weights[:-1], net.biases[:-1]):
        lower, upper = _affine_layer(w, bias, lower, upper)
        l = _affine_min(lower, zlo, zhi)
        u = _affine_max(upper, zlo, zhi)
        active = l >= 0
        unstable = ~active & (u > 0)
        # Lower: kept for active neurons, the zero function otherwise.
        lower = lower * active[..., None]
        # Upper: kept for active, chord u*(z-l)/(u-l) of the upper form if unstable, zero if inactive.
        denom = np.where(unstable, u - l, 1.0)
        slope = np.where(active, 1.0, np.where(unstable, u / denom, 0.0))
        upper = upper * slope[..., None]
        upper[..., -1] -= np.where(unstable, slope * l, 0.0)
    return lower, upper


def propagate(net: Network, lo, hi) -> SymbolicBounds:
    """Output-layer symbolic bounds (normalized output units) for raw boxes."""
    zlo, zhi = normalized_boxes(net, lo, hi)
    lower, upper = _hidden_forms(net, zlo, zhi)
    lower, upper = _affine_layer(net.weights[-1], net.biases[-1], lower, upper)
    return SymbolicBounds(lower, upper, zlo, zhi)


def output_intervals(net: Network, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Concrete raw-unit output intervals for each box."""
    lo_n, hi_n = propagate(net, lo, hi).concrete()
    return lo_n * net.output_range + net.output_mean, hi_n * net.output_range + net.output_mean


def _difference_matrices(net: Network):
    """Stacked rows so that row (a, b) of [pos | neg] maps hidden bounds to score_b - score_a."""
    cached = getattr(net, "_diff_cache", None)
    if cached is None:
        w, bias = net.weights[-1], net.biases[-1]
        dw = w[None, :, :] - w[:, None, :]
        n = w.shape[0]
        cached = (np.concatenate([np.maximum(dw, 0), np.minimum(dw, 0)], axis=2).reshape(n * n, -1),
                  (bias[None, :] - bias[:, None]).reshape(-1))
        net._diff_cache = cached
    return cached


def _dominance(net: Network, zlo, zhi) -> np.ndarray:
    """Boolean (B, N): advisory a is possible unless some b provably scores higher."""
    lower, upper = _hidden_forms(net, zlo, zhi)
    mat, dbias = _difference_matrices(net)
    forms = mat @ np.concatenate([lower, upper], axis=1)
    forms[..., -1] += dbias
    n = net.num_outputs
    low = _affine_min(forms, zlo, zhi).reshape(-1, n, n) * net.output_range
    low[:, np.arange(n), np.arange(n)] = -np.inf
    return ~np.any(low > MARGIN, axis=2)


def possible_advisories_batch(net: Network, lo, hi, split_budget: int = 6) -> np.ndarray:
    """Advisory sets (B, N) for raw boxes, bisecting undecided boxes.

    A child box keeps only advisories its parent kept; a box's result is the
    union over its leaves.
    """
    if split_budget < 0:
        raise ContractError("split_budget must be >= 0")
    zlo, zhi = normalized_boxes(net, lo, hi)
    n_box = zlo.shape[0]
    result = np.zeros((n_box, net.num_outputs), dtype=bool)
    owner = np.arange(n_box)
    parent_set = np.ones((n_box, net.num_outputs), dtype=bool)
    for depth in range(split_budget + 1):
        if owner.size == 0:
            break
        sets = _dominance(net, zlo, zhi) & parent_set
        undecided = sets.sum(axis=1) > 1
        if depth == split_budget:
            undecided[:] = False
        done = ~undecided
        np.logical_or.at(result, owner[done], sets[done])
        if not undecided.any():
            break
        zlo, zhi, owner, sets = zlo[undecided], zhi[undecided], owner[undecided], sets[undecided]
        width = zhi - zlo
        dim = np.argmax(width, axis=1)  # first maximum = lowest index on ties
        rows = np.arange(zlo.shape[0])
        mid = 0.5 * (zlo[rows, dim] + zhi[rows, dim])
        left_hi = zhi.copy()
        left_hi[rows, dim] = mid
        right_lo = zlo.copy()
        right_lo[rows, dim] = mid
        zlo = np.concatenate([zlo, right_lo])
        zhi = np.concatenate([left_hi, zhi])
        owner = np.concatenate([owner, owner])
        parent_set = np.concatenate([sets, sets])
    return result


def possible_advisories(net: Network, lo: Sequence[float], hi: Sequence[float], split_budget: int = 6) -> set[int]:
    row = possible_advisories_batch(net, [lo], [hi], split_budget)[0]
    return set(np.flatnonzero(row).tolist())


def sample_audit(net: Network, lo, hi, sets: np.ndarray, samples: int = 1000, seed: int = 0) -> int:
    """Count boxes where a sampled point's argmax is missing from its set."""
    rng = np.random.default_rng(seed)
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    bad = 0
    for i in range(lo.shape[0]):
        pts = rng.uniform(lo[i], hi[i], size=(samples, lo.shape[1]))
        pts[:2] = [lo[i], hi[i]]
        best = np.argmax(evaluate(net, pts), axis=1)
        if not np.all(sets[i, best]):
            bad += 1
    return bad


def batch_verify(net: Network, lo, hi, split_budget: int = 6, chunk: int = 2048,
                 checkpoint: str | Path | None = None, threads: int = 1,
                 progress: Callable[[int, int], None] | None = None) -> np.ndarray:
    """Advisory sets for many boxes, in box order.

    With ``checkpoint``, finished chunks are appended to that file and a rerun
    resumes after the last complete chunk. Results do not depend on
    ``threads`` or ``chunk``.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_2d(np.asarray(hi, dtype=np.float64))
    n_box, n_out = lo.shape[0], net.num_outputs
    starts = list(range(0, n_box, chunk))
    out = np.zeros((n_box, n_out), dtype=bool)
    done = 0
    ck = Path(checkpoint) if checkpoint is not None else None
    row_bytes = (n_out + 7) // 8
    tag = _checkpoint_tag(net, lo, hi, split_budget, chunk)
    if ck is not None and ck.exists():
        data = ck.read_bytes()
        if data[:32] == tag:
            body = np.frombuffer(data, np.uint8, offset=32)
            n_rows = min(body.size // row_bytes, n_box)
            n_rows -= n_rows % chunk if n_rows < n_box else 0
            out[:n_rows] = np.unpackbits(body[:n_rows * row_bytes].reshape(n_rows, row_bytes),
                                         axis=1, bitorder="little")[:, :n_out].astype(bool)
            done = n_rows
            with ck.open("r+b") as f:
                f.truncate(32 + done * row_bytes)  # drop a partially written chunk
            log.info("resuming from %d/%d boxes", done, n_box)
        else:
            log.warning("checkpoint %s belongs to a different job; starting over", ck)
            ck.unlink()
    pending = [s for s in starts if s >= done]
    if ck is not None and done == 0:
        ck.write_bytes(tag)

    def work(s):
        return s, possible_advisories_batch(net, lo[s:s + chunk], hi[s:s + chunk], split_budget)

    def consume(results):
        for s, sets in results:
            out[s:s + sets.shape[0]] = sets
            if ck is not None:
                with ck.open("ab") as f:
                    f.write(np.packbits(sets, axis=1, bitorder="little").tobytes())
            if progress is not None:
                progress(s + sets.shape[0], n_box)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            consume(pool.map(work, pending))  # map preserves submission order
    else:
        consume(map(work, pending))
    return out


def _checkpoint_tag(net, lo, hi, split_budget, chunk) -> bytes:
    h = hashlib.sha256()
    for a in net.weights + net.biases + [lo, hi]:
        h.update(np.ascontiguousarray(a).tobytes())
    h.update(struct.pack("<II", split_budget, chunk))
    return h.digest()


def save_advisory_cache(sets: np.ndarray, path: str | Path, meta: dict | None = None):
    """ACST file: magic, u32 cell count, u32 action count, packed per-cell bitsets, JSON trailer."""
    sets = np.asarray(sets, dtype=bool)
    n_cells, n_act = sets.shape
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    Path(path).write_bytes(ACST_MAGIC + struct.pack("<II", n_cells, n_act)
                           + np.packbits(sets, axis=1, bitorder="little").tobytes()
                           + struct.pack("<I", len(blob)) + blob)


def load_advisory_cache(path: str | Path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:4] != ACST_MAGIC:
        raise ContractError(f"{path}: not an advisory cache")
    n_cells, n_act = struct.unpack_from("<II", data, 4)
    row = (n_act + 7) // 8
    end = 12 + n_cells * row
    if len(data) < end:
        raise ContractError(f"{path}: truncated advisory cache")
    bits = np.frombuffer(data, np.uint8, n_cells * row, 12).reshape(n_cells, row)
    sets = np.unpackbits(bits, axis=1, bitorder="little")[:, :n_act].astype(bool)
    meta = {}
    if len(data) >= end + 4:
        (n,) = struct.unpack_from("<I", data, end)
        meta = json.loads(data[end + 4:end + 4 + n])
    return sets, meta
