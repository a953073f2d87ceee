"""Finite MDPs, state-action score tables, and Gauss-Seidel value iteration."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

log = logging.getLogger(__name__)

QTABLE_MAGIC = b"QTBL"
QTABLE_VERSION = 1


class ContractError(ValueError):
    """A caller broke an operation's preconditions."""


class CapacityError(RuntimeError):
    """A requested table does not fit the configured memory budget."""


class Grid:
    """Rectilinear grid of cut points; flat indices are C-order over dimensions."""

    def __init__(self, cuts: Sequence[Sequence[float]], names: Sequence[str] | None = None):
        self.cuts = [np.asarray(c, dtype=np.float64) for c in cuts]
        for i, c in enumerate(self.cuts):
            if c.ndim != 1 or c.size == 0:
                raise ContractError(f"dimension {i} has no cut points")
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise ContractError(f"cut points of dimension {i} are not strictly increasing")
        self.names = list(names) if names is not None else [f"x{i}" for i in range(len(self.cuts))]
        if len(self.names) != len(self.cuts):
            raise ContractError("one name per dimension required")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.size for c in self.cuts)

    @property
    def ndim(self) -> int:
        return len(self.cuts)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def ravel(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(i) for i in multi), self.shape))

    def unravel(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.shape))

    def point(self, flat: int) -> np.ndarray:
        return np.array([c[i] for c, i in zip(self.cuts, self.unravel(flat))])

    def points(self) -> np.ndarray:
        """All grid points, shape (size, ndim), in flat-index order."""
        mesh = np.meshgrid(*self.cuts, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interp(self, x: Sequence[float], method: str = "linear") -> list[tuple[int, float]]:
        """Interpolation stencil at ``x`` as (flat index, weight) pairs.

        Coordinates outside the grid are clamped to the boundary. ``linear``
        gives multilinear weights over the bracketing corners; ``nearest``
        gives a single point (ties go to the lower cut).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.ndim,):
            raise ContractError(f"expected {self.ndim} coordinates, got shape {x.shape}")
        per_dim: list[list[tuple[int, float]]] = []
        for c, xi in zip(self.cuts, x):
            lo, hi, w = _bracket(c, float(xi))
            if method == "nearest":
                per_dim.append([(hi, 1.0)] if w > 0.5 else [(lo, 1.0)])
            elif method == "linear":
                per_dim.append([(lo, 1.0 - w), (hi, w)] if hi != lo and w > 0.0 else [(lo, 1.0)])
            else:
                raise ContractError(f"unknown interpolation method {method!r}")
        stencil = [((), 1.0)]
        for options in per_dim:
            stencil = [(idx + (i,), wt * w) for idx, wt in stencil for i, w in options if w > 0.0]
        return [(self.ravel(idx), wt) for idx, wt in stencil]


@numba.njit(cache=True)
def _bracket(cuts, x):
    """Lower/upper cut index around clamped ``x`` and the upper weight."""
    n = cuts.size
    if n == 1 or x <= cuts[0]:
        return 0, 0, 0.0
    if x >= cuts[n - 1]:
        return n - 1, n - 1, 0.0
    hi = np.searchsorted(cuts, x, side="right")
    lo = hi - 1
    w = (x - cuts[lo]) / (cuts[hi] - cuts[lo])
    return lo, hi, w


@dataclass
class Mdp:
    """Finite MDP with sparse transitions stored row-wise per (state, action).

    Row ``s * num_actions + a`` spans ``next_states[offsets[r]:offsets[r+1]]``.
    ``discount`` is either a scalar or a per-state array; a per-state value
    applies to the continuation term of that state's backups.
    """

    num_states: int
    num_actions: int
    offsets: np.ndarray
    next_states: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    discount: float | np.ndarray = 0.9

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.next_states = np.ascontiguousarray(self.next_states, dtype=np.int64)
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        self.rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        if self.offsets.shape != (self.num_states * self.num_actions + 1,):
            raise ContractError("offsets must have num_states * num_actions + 1 entries")
        if self.rewards.shape != (self.num_states, self.num_actions):
            raise ContractError("rewards must be shaped (num_states, num_actions)")

    @classmethod
    def from_lists(cls, transitions, rewards, discount=0.9) -> "Mdp":
        """Build from nested ``transitions[s][a] = [(s_next, p), ...]``."""
        rewards = np.asarray(rewards, dtype=np.float64)
        n_s, n_a = rewards.shape
        offsets = [0]
        nxt: list[int] = []
        prb: list[float] = []
        for s in range(n_s):
            for a in range(n_a):
                for sp, p in transitions[s][a]:
                    nxt.append(sp)
                    prb.append(p)
                offsets.append(len(nxt))
        return cls(n_s, n_a, np.array(offsets), np.array(nxt, dtype=np.int64),
                   np.array(prb, dtype=np.float64), rewards, discount)

    def state_discounts(self) -> np.ndarray:
        d = np.asarray(self.discount, dtype=np.float64)
        if d.ndim == 0:
            return np.full(self.num_states, float(d))
        if d.shape != (self.num_states,):
            raise ContractError("per-state discount must have num_states entries")
        return d

    def _check(self, s: int, a: int):
        if not (0 <= s < self.num_states and 0 <= a < self.num_actions):
            raise ContractError(f"(s={s}, a={a}) out of range for {self.num_states}x{self.num_actions} MDP")

    def transitions(self, s: int, a: int) -> list[tuple[int, float]]:
        self._check(s, a)
        r = s * self.num_actions + a
        lo, hi = self.offsets[r], self.offsets[r + 1]
        return [(int(i), float(p)) for i, p in zip(self.next_states[lo:hi], self.probs[lo:hi])]

    def reward(self, s: int, a: int) -> float:
        self._check(s, a)
        return float(self.rewards[s, a])

    def validate(self, atol: float = 1e-9):
        """Check stochasticity and index ranges; raises ContractError."""
        if self.next_states.size and (self.next_states.min() < 0 or self.next_states.max() >= self.num_states):
            raise ContractError("next-state index out of range")
        if self.probs.size and self.probs.min() < 0:
            raise ContractError("negative transition probability")
        sums = np.add.reduceat(self.probs, self.offsets[:-1]) if self.probs.size else np.zeros(0)
        empty = self.offsets[1:] == self.offsets[:-1]
        sums = np.where(empty, 0.0, sums)
        bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
        if bad.size:
            s, a = divmod(int(bad[0]), self.num_actions)
            raise ContractError(f"transition probabilities of (s={s}, a={a}) sum to {sums[bad[0]]!r}")
        d = self.state_discounts()
        if np.any(d < 0) or np.any(d > 1):
            raise ContractError("discount outside [0, 1]")


@dataclass
class QTable:
    values: np.ndarray
    grid: Grid | None = None
    residual: float = float("nan")
    converged: bool = True
    residuals: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError("QTable values must be (num_states, num_actions)")
        if self.grid is not None and self.grid.size != self.values.shape[0]:
            raise ContractError(f"grid has {self.grid.size} points but table has {self.values.shape[0]} states")

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]


def bellman_backup(q: QTable, mdp: Mdp, s: int, a: int) -> float:
    """One Bellman update of (s, a) reading the current contents of ``q``."""
    if q.values.shape != (mdp.num_states, mdp.num_actions):
        raise ContractError("table not sized for this MDP")
    mdp._check(s, a)
    gamma = mdp.state_discounts()[s]
    cont = sum(p * q.values[sp].max() for sp, p in mdp.transitions(s, a))
    return mdp.reward(s, a) + gamma * cont


@numba.njit(cache=True)
def _gauss_seidel_sweep(values, offsets, next_states, probs, rewards, discounts):
    n_s, n_a = values.shape
    best = np.empty(n_s)
    for s in range(n_s):
        best[s] = values[s].max()
    worst = 0.0
    for s in range(n_s):
        g = discounts[s]
        for a in range(n_a):
            r = s * n_a + a
            acc = 0.0
            for k in range(offsets[r], offsets[r + 1]):
                acc += probs[k] * best[next_states[k]]
            new = rewards[s, a] + g * acc
            diff = abs(new - values[s, a])
            if diff > worst:
                worst = diff
            values[s, a] = new
        m = values[s, 0]
        for a in range(1, n_a):
            if values[s, a] > m:
                m = values[s, a]
        best[s] = m
    return worst


def solve(mdp: Mdp, tol: float = 1e-3, max_sweeps: int = 1000, grid: Grid | None = None,
          init: np.ndarray | None = None) -> QTable:
    """Gauss-Seidel value iteration, sweeping states in ascending index order.

    Stops once a sweep changes no entry by ``tol`` or more. Running out of
    sweeps is not an error: the table comes back with ``converged=False``.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    values = np.zeros((mdp.num_states, mdp.num_actions)) if init is None else np.array(init, dtype=np.float64)
    discounts = mdp.state_discounts()
    residuals: list[float] = []
    residual = float("inf")
    for sweep in range(max_sweeps):
        residual = float(_gauss_seidel_sweep(values, mdp.offsets, mdp.next_states, mdp.probs,
                                             mdp.rewards, discounts))
        residuals.append(residual)
        log.debug("sweep %d residual %.3e", sweep, residual)
        if residual < tol:
            break
    converged = residual < tol
    if not converged:
        log.warning("value iteration stopped after %d sweeps with residual %.3e", max_sweeps, residual)
    return QTable(values, grid, residual, converged, residuals)


def policy(q: QTable, s: int) -> int:
    """Best action at state ``s``; ties go to the lowest index."""
    if not 0 <= s < q.num_states:
        raise ContractError(f"state {s} out of range")
    return int(np.argmax(q.values[s]))


def multilinear_lookup(q: QTable, x: Sequence[float], method: str = "nearest") -> np.ndarray:
    """Per-action scores at a continuous state, clamped to the grid."""
    if q.grid is None:
        raise ContractError("table has no grid metadata")
    out = np.zeros(q.num_actions)
    for idx, w in q.grid.interp(x, method):
        out += w * q.values[idx]
    return out


def save_qtable(q: QTable, path: str | Path, meta: dict | None = None):
    """Write the binary QTBL format; ``meta`` goes in a trailing JSON block."""
    if q.grid is None:
        raise ContractError("table needs grid metadata to be saved")
    dims = q.grid.shape
    parts = [QTABLE_MAGIC, struct.pack("<II", QTABLE_VERSION, len(dims)),
             struct.pack(f"<{len(dims)}I", *dims), struct.pack("<I", q.num_actions)]
    for c in q.grid.cuts:
        parts.append(c.astype("<f4").tobytes())
    parts.append(np.ascontiguousarray(q.values, dtype="<f4").tobytes())
    info = {"names": q.grid.names, "residual": _json_float(q.residual), "converged": bool(q.converged)}
    info.update(q.meta)
    info.update(meta or {})
    blob = json.dumps(info, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)) + blob)
    Path(path).write_bytes(b"".join(parts))


def load_qtable(path: str | Path) -> QTable:
    data = Path(path).read_bytes()
    if data[:4] != QTABLE_MAGIC:
        raise ContractError(f"{path}: not a QTBL file")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != QTABLE_VERSION:
        raise ContractError(f"{path}: unsupported QTBL version {version}")
    pos = 12
    dims = struct.unpack_from(f"<{ndim}I", data, pos)
    pos += 4 * ndim
    (n_a,) = struct.unpack_from("<I", data, pos)
    pos += 4
    cuts = []
    for n in dims:
        cuts.append(np.frombuffer(data, "<f4", n, pos).astype(np.float64))
        pos += 4 * n
    n_s = int(np.prod(dims, dtype=np.int64))
    if len(data) < pos + 4 * n_s * n_a:
        raise ContractError(f"{path}: truncated score block")
    values = np.frombuffer(data, "<f4", n_s * n_a, pos).astype(np.float64).reshape(n_s, n_a)
    pos += 4 * n_s * n_a
    meta: dict = {}
    if pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        meta = json.loads(data[pos + 4:pos + 4 + n])
    names = meta.pop("names", None)
    residual = meta.pop("residual", None)
    converged = meta.pop("converged", True)
    grid = Grid(cuts, names)
    return QTable(values, grid, float("nan") if residual is None else residual, converged, meta=meta)


def _json_float(x: float):
    return None if x != x or x in (float("inf"), float("-inf")) else float(x)
