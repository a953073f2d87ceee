"""Reachability when the pilot may lag the controller by several seconds.

Each reachable cell carries annotations (history, reversals, last sense):
the last ``eps`` issued advisories, how many direction reversals have been
issued, and the sign of the most recent directional advisory. The
controller queried is the one for the newest advisory in the history; the
aircraft may be flying any advisory still in the history.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..mdp import ContractError
from .engine import ReachModel, ReachResult, StepRecord, Verdict, STEP_CAP, run_reachability

# (cell, history, reversals, last_sense)
State = tuple[int, tuple[int, ...], int, int]


def _issue(model: ReachModel, hist, nrev: int, last: int, a: int, limit: int | None):
    """Apply the reversal policy to a proposed advisory: (advisory, reversals, last sense)."""
    sense = model.sense
    reverses = sense[a] * last < 0
    if limit is not None and reverses and nrev >= limit:
        a = hist[-1]
        reverses = sense[a] * last < 0
    if limit is None:
        nrev = 0  # unbounded counts would make the state space infinite
    else:
        nrev = min(nrev + int(reverses), limit)
    return a, nrev, int(sense[a]) if sense[a] != 0 else last


def reach_step_delayed(states: Iterable[State], model: ReachModel, tau: int, eps: int,
                       reversal_limit: int | None = None, inject: bool = True):
    """Successor annotated states and, per new state, its first contributor."""
    if eps < 1:
        raise ContractError("pilot delay must be at least one step")
    out: dict[State, State | None] = {}
    for cell, hist, nrev, last in sorted(states):
        p = hist[-1]
        for a in np.flatnonzero(model.cache[p, tau, cell]):
            a2, nrev2, last2 = _issue(model, hist, nrev, last, int(a), reversal_limit)
            hist2 = hist[1:] + (a2,)
            for b in sorted(set(hist2)):
                for nxt in model.succ.of(b, cell):
                    key = (int(nxt), hist2, nrev2, last2)
                    if key not in out:
                        out[key] = (cell, hist, nrev, last)
    if inject:
        base = (model.coc,) * eps
        for c in np.flatnonzero(model.boundary):
            out.setdefault((int(c), base, 0, 0), None)
    return out


def run_reachability_delayed(model: ReachModel, eps: int, reversal_limit: int | None = None,
                             step_cap: int = STEP_CAP, inject: bool = True, keep_sets: bool = False) -> ReachResult:
    """Delayed-pilot analogue of :func:`run_reachability`; eps = 0 falls back to it."""
    if eps == 0:
        return run_reachability(model, step_cap=step_cap, inject=inject, keep_sets=keep_sets)
    if eps < 0:
        raise ContractError("pilot delay must be non-negative")
    base = (model.coc,) * eps
    current = frozenset((int(c), base, 0, 0) for c in np.flatnonzero(model.initial))
    tau = model.tau_max
    history = [dict.fromkeys(current)]
    taus = [tau]

    def sep(st):
        return float(min((model.separation[s[0]] for s in st), default=float("inf")))

    steps = [StepRecord(0, tau, len(current), sep(current))]
    sets = [project(current, model)] if keep_sets else []
    tau0_sep = steps[0].min_sep if tau == 0 else None
    seen: set[frozenset] = set()
    step, after = 0, 0

    def done(verdict, witness=()):
        return ReachResult(verdict, steps, tau0_sep if tau0_sep is not None else float("nan"),
                           steps[-1].min_sep, list(witness), sets)

    while True:
        if tau == 0:
            hits = sorted(s for s in current if model.nmac[s[0]])
            if hits:
                chain, s, k = [], hits[0], step
                while s is not None:
                    chain.append((k, taus[k], s[1][-1], s[0]))
                    s = history[k][s]
                    k -= 1
                return done(Verdict.UNSAFE, chain[::-1])
            if current in seen:
                return done(Verdict.SAFE)
            seen.add(current)
            if after >= step_cap:
                return done(Verdict.NON_CONVERGED)
            after += 1
        nxt = reach_step_delayed(current, model, tau, eps, reversal_limit, inject)
        current = frozenset(nxt)
        history.append(nxt)
        tau = max(tau - 1, 0)
        step += 1
        taus.append(tau)
        steps.append(StepRecord(step, tau, len(current), sep(current)))
        if keep_sets:
            sets.append(project(current, model))
        if tau == 0 and tau0_sep is None:
            tau0_sep = steps[-1].min_sep


def project(states: Iterable[State], model: ReachModel) -> np.ndarray:
    """Collapse annotations to the plain (newest advisory, cell) set."""
    out = np.zeros((model.n_adv, model.n_cont), dtype=bool)
    for cell, hist, _, _ in states:
        out[hist[-1], cell] = True
    return out
