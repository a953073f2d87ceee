"""Fixed-point reachability over cells tagged with (previous advisory, tau)."""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numba
import numpy as np

from ..mdp import ContractError
from .cells import CellGrid, DynBounds, cells_intersecting

log = logging.getLogger(__name__)

STEP_CAP = 500


class Verdict(str, Enum):
    SAFE = "SAFE"
    UNSAFE = "POTENTIALLY-UNSAFE"
    NON_CONVERGED = "NON-CONVERGED"


@dataclass
class Successors:
    """Per-advisory CSR lists of successor cells for every continuous cell."""

    offsets: np.ndarray  # (n_adv, n_cont + 1)
    cells: np.ndarray  # (n_adv, max_nnz) padded; row a uses offsets[a]

    @classmethod
    def build(cls, grid: CellGrid, bounds_fn: Callable[[np.ndarray, np.ndarray, int], DynBounds], n_adv: int):
        lo, hi = grid.boxes()
        rows = []
        for a in range(n_adv):
            lists = [cells_intersecting(bounds_fn(lo[c], hi[c], a), grid) for c in range(grid.size)]
            offs = np.zeros(grid.size + 1, dtype=np.int64)
            offs[1:] = np.cumsum([len(x) for x in lists])
            rows.append((offs, np.concatenate(lists) if offs[-1] else np.zeros(0, dtype=np.int64)))
        return cls.from_lists(rows)

    @classmethod
    def from_lists(cls, rows):
        width = max(1, max(int(r[1].size) for r in rows))
        cells = np.full((len(rows), width), -1, dtype=np.int64)
        for a, (_, c) in enumerate(rows):
            cells[a, :c.size] = c
        return cls(np.stack([r[0] for r in rows]).astype(np.int64), cells)

    def of(self, a: int, c: int) -> np.ndarray:
        return self.cells[a, self.offsets[a, c]:self.offsets[a, c + 1]]


@dataclass
class ReachModel:
    """Everything a reachability run needs, already discretized.

    ``cache[p, tau, c]`` is the boolean advisory set the controller may
    issue from cell c when the previous advisory was p. Dynamics do not
    depend on tau or the previous advisory, so successors are per (a, c).
    """

    grid: CellGrid
    succ: Successors
    cache: np.ndarray  # bool (n_adv, n_tau, n_cont, n_adv)
    nmac: np.ndarray  # bool (n_cont,) cells that are NMAC when tau == 0
    separation: np.ndarray  # (n_cont,) distance from the NMAC region
    boundary: np.ndarray | None = None  # bool (n_cont,) re-added each step
    initial: np.ndarray | None = None  # bool (n_cont,) at tau_max, previous advisory COC
    sense: np.ndarray | None = None  # direction of each advisory (+1/-1/0)
    coc: int = 0
    names: Sequence[str] = ()

    def __post_init__(self):
        n_adv, n_tau, n_cont, n_a2 = self.cache.shape
        if n_adv != n_a2 or n_cont != self.grid.size or self.succ.offsets.shape != (n_adv, n_cont + 1):
            raise ContractError("advisory cache, successors and grid disagree in size")
        if self.boundary is None:
            self.boundary = np.zeros(n_cont, dtype=bool)
        if self.initial is None:
            self.initial = np.ones(n_cont, dtype=bool)
        if self.sense is None:
            self.sense = np.zeros(n_adv, dtype=np.int64)

    @property
    def n_adv(self) -> int:
        return self.cache.shape[0]

    @property
    def tau_max(self) -> int:
        return self.cache.shape[1] - 1

    @property
    def n_cont(self) -> int:
        return self.cache.shape[2]


@numba.njit(cache=True)
def _expand(reach, cache_t, offsets, cells, out, pred):
    n_adv, n_cont = reach.shape
    for p in range(n_adv):
        for c in range(n_cont):
            if not reach[p, c]:
                continue
            src = p * n_cont + c
            for a in range(n_adv):
                if not cache_t[p, c, a]:
                    continue
                for k in range(offsets[a, c], offsets[a, c + 1]):
                    nxt = cells[a, k]
                    if not out[a, nxt]:
                        out[a, nxt] = True
                        pred[a, nxt] = src


def reach_step(reach: np.ndarray, model: ReachModel, tau: int, inject: bool = True):
    """One expansion from ``reach`` (n_adv x n_cont, at ``tau``).

    Returns the next set and, for each new entry, the flat (advisory, cell)
    of its lowest-index contributor (-1 for injected boundary cells).
    """
    if reach.shape != (model.n_adv, model.n_cont):
        raise ContractError("reach set shape does not match the model")
    if not 0 <= tau <= model.tau_max:
        raise ContractError(f"tau {tau} outside the advisory cache (0..{model.tau_max})")
    out = np.zeros_like(reach)
    pred = np.full(reach.shape, -1, dtype=np.int64)
    _expand(reach, model.cache[:, tau], model.succ.offsets, model.succ.cells, out, pred)
    if inject:
        out[model.coc] |= model.boundary
    return out, pred


def min_separation(reach: np.ndarray, model: ReachModel) -> float:
    cells = reach.any(axis=0)
    return float(model.separation[cells].min()) if cells.any() else float("inf")


@dataclass
class StepRecord:
    step: int
    tau: int
    count: int
    min_sep: float


@dataclass
class ReachResult:
    verdict: Verdict
    steps: list[StepRecord]
    tau0_min_sep: float
    converged_min_sep: float
    witness: list[tuple[int, int, int, int]] = field(default_factory=list)  # (step, tau, s_adv, cell)
    sets: list[np.ndarray] = field(default_factory=list)

    @property
    def first_hit(self) -> int | None:
        return self.steps[-1].step if self.verdict is Verdict.UNSAFE else None


def _digest(reach: np.ndarray) -> bytes:
    return hashlib.sha256(np.packbits(reach).tobytes()).digest()


def _witness(preds, taus, step, a, c, n_cont):
    chain = [(step, taus[step], a, c)]
    while step > 0:
        src = preds[step][a, c]
        if src < 0:
            break
        step -= 1
        a, c = divmod(int(src), n_cont)
        chain.append((step, taus[step], a, c))
    return chain[::-1]


def run_reachability(model: ReachModel, step_cap: int = STEP_CAP, inject: bool = True,
                     keep_sets: bool = False) -> ReachResult:
    """Iterate until the set stops changing at tau = 0, an NMAC cell appears, or the cap."""
    reach = np.zeros((model.n_adv, model.n_cont), dtype=bool)
    reach[model.coc] = model.initial
    tau = model.tau_max
    sets, preds, taus = [reach] if keep_sets else [], [None], [tau]
    steps = [StepRecord(0, tau, int(reach.sum()), min_separation(reach, model))]
    seen: set[bytes] = set()
    tau0_sep = steps[0].min_sep if tau == 0 else None
    step, after = 0, 0

    def result(verdict, sep, witness=()):
        return ReachResult(verdict, steps, tau0_sep if tau0_sep is not None else float("nan"), sep,
                           list(witness), sets)

    while True:
        if tau == 0:
            hit = reach[:, model.nmac]
            if hit.any():
                a, k = np.argwhere(hit)[0]
                c = int(np.flatnonzero(model.nmac)[k])
                return result(Verdict.UNSAFE, steps[-1].min_sep,
                              _witness(preds, taus, step, int(a), c, model.n_cont))
            digest = _digest(reach)
            if digest in seen:
                return result(Verdict.SAFE, steps[-1].min_sep)
            seen.add(digest)
            if after >= step_cap:
                return result(Verdict.NON_CONVERGED, steps[-1].min_sep)
            after += 1
        nxt, pred = reach_step(reach, model, tau, inject)
        tau = max(tau - 1, 0)
        step += 1
        reach = nxt
        if keep_sets:
            sets.append(reach)
        preds.append(pred)
        taus.append(tau)
        steps.append(StepRecord(step, tau, int(reach.sum()), min_separation(reach, model)))
        if tau == 0 and tau0_sep is None:
            tau0_sep = steps[-1].min_sep
        log.debug("step %d tau %d cells %d", step, tau, steps[-1].count)


def with_dynamics(model: ReachModel, succ: Successors) -> ReachModel:
    """Same controller abstraction, different dynamics (used by delta sweeps)."""
    return ReachModel(model.grid, succ, model.cache, model.nmac, model.separation, model.boundary,
                      model.initial, model.sense, model.coc, model.names)


def delta_sweep(model_for_delta: Callable[[float], ReachModel], deltas: Sequence[float], **kw):
    """Rows of (delta, tau0 min sep, converged min sep, verdict)."""
    rows = []
    for d in deltas:
        res = run_reachability(model_for_delta(float(d)), **kw)
        rows.append((float(d), res.tau0_min_sep, res.converged_min_sep, res.verdict))
        log.info("delta %g: %s (tau=0 sep %.1f, converged sep %.1f)", d, res.verdict.value,
                 res.tau0_min_sep, res.converged_min_sep)
    return rows


def write_trace(result: ReachResult, model: ReachModel, path, summary_path=None):
    """Per-step cell listing plus a per-step summary, both CSV."""
    lo, hi = model.grid.boxes()
    names = model.grid.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "tau", "s_adv", "cell"] + [f"{n}_{e}" for n in names for e in ("lo", "hi")])
        for rec, reach in zip(result.steps, result.sets):
            for a, c in np.argwhere(reach):
                w.writerow([rec.step, rec.tau, int(a), int(c)] +
                           [repr(float(v)) for d in range(len(names)) for v in (lo[c, d], hi[c, d])])
    if summary_path is not None:
        write_summary(result, summary_path)


def write_summary(result: ReachResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "tau", "cells", "min_sep"])
        for r in result.steps:
            w.writerow([r.step, r.tau, r.count, repr(r.min_sep)])
