"""VerticalCAS: vertical-rate advisories against a single intruder.

Internal units are ft and ft/s; ft/min only appears when reading or
writing configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numba
import numpy as np

from .costs import Costs
from .mdp import CapacityError, ContractError, Grid, Mdp, QTable, _bracket

G = 32.2
FPM = 1.0 / 60.0
NMAC_HEIGHT = 100.0


class VAdvisory(IntEnum):
    COC = 0
    DNC = 1
    DND = 2
    DES1500 = 3
    CL1500 = 4
    SDES1500 = 5
    SCL1500 = 6
    SDES2500 = 7
    SCL2500 = 8


# Ownship acceleration ranges used by the table model (ft/s^2).
ACCEL = {
    VAdvisory.COC: (-10.7, 10.7),
    VAdvisory.DNC: (-16.1, -8.33),
    VAdvisory.DND: (8.33, 16.1),
    VAdvisory.DES1500: (-16.2, -8.33),
    VAdvisory.CL1500: (8.33, 16.2),
    VAdvisory.SDES1500: (-16.2, -10.7),
    VAdvisory.SCL1500: (10.7, 16.2),
    VAdvisory.SDES2500: (-16.2, -10.7),
    VAdvisory.SCL2500: (10.7, 16.2),
}
# +1 climb-type, -1 descend-type, 0 for COC.
SENSE = np.array([0, -1, 1, -1, 1, -1, 1, -1, 1])
STRENGTH = np.array([0, 1, 1, 2, 2, 3, 3, 4, 4])
# Target vertical rate (ft/s) each advisory asks the ownship to reach.
TARGET = np.array([np.nan, 0.0, 0.0, -1500 * FPM, 1500 * FPM, -1500 * FPM, 1500 * FPM,
                   -2500 * FPM, 2500 * FPM])
ACC_LO = np.array([ACCEL[a][0] for a in VAdvisory])
ACC_HI = np.array([ACCEL[a][1] for a in VAdvisory])


@dataclass(frozen=True)
class VState:
    h: float
    hdot_own: float
    hdot_int: float
    tau: int
    s_adv: int = 0

    def __post_init__(self):
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ContractError(f"tau must be a nonnegative integer, got {self.tau}")
        if not 0 <= self.s_adv < len(VAdvisory):
            raise ContractError(f"s_adv {self.s_adv} out of range")


@dataclass
class VGrid:
    h: np.ndarray
    hdot_own: np.ndarray
    hdot_int: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.hdot_own = np.asarray(self.hdot_own, dtype=np.float64)
        self.hdot_int = np.asarray(self.hdot_int, dtype=np.float64)
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.h.min() < -8000 or self.h.max() > 8000:
            raise ContractError("h cut points must lie in [-8000, 8000] ft")
        for name in ("hdot_own", "hdot_int"):
            v = getattr(self, name)
            if np.abs(v).max() > 6000 * FPM + 1e-9:
                raise ContractError(f"{name} cut points must lie in [-6000, 6000] ft/min")
        if not np.array_equal(self.tau, np.arange(self.tau.size)) or self.tau.max() > 40:
            raise ContractError("tau cut points must be 0, 1, ..., T with T <= 40")
        self.grid  # validates monotonicity

    @property
    def grid(self) -> Grid:
        return Grid([self.tau, np.arange(len(VAdvisory), dtype=float), self.h, self.hdot_own, self.hdot_int],
                    ["tau", "s_adv", "h", "hdot_own", "hdot_int"])

    @property
    def num_states(self) -> int:
        return self.tau.size * len(VAdvisory) * self.h.size * self.hdot_own.size * self.hdot_int.size

    @classmethod
    def desk(cls) -> "VGrid":
        h = [0, 50, 100, 200, 300, 450, 650, 900, 1250, 1750, 2500, 4000, 8000]
        h = sorted({s * v for v in h for s in (-1, 1)})
        own = [0, 500, 1000, 1500, 2000, 2500, 3500, 6000]
        own = sorted({s * v for v in own for s in (-1, 1)})
        return cls(np.array(h, float), np.array(own) * FPM,
                   np.array([-6000, -2500, 0, 2500, 6000]) * FPM, np.arange(21))

    @classmethod
    def paper(cls) -> "VGrid":
        return cls(np.linspace(-8000, 8000, 65), np.linspace(-6000, 6000, 39) * FPM,
                   np.linspace(-6000, 6000, 39) * FPM, np.arange(41))


def own_motion(hdot: float, accel: float, target: float | None = None) -> tuple[float, float]:
    """Ownship climb over one second: (altitude gained, new rate).

    With a ``target`` the pilot accelerates until the rate reaches it and then
    holds; without one the acceleration is applied for the whole second.
    """
    if target is not None and accel != 0.0:
        t_hit = (target - hdot) / accel
        if 0.0 <= t_hit < 1.0:
            gained = hdot * t_hit + 0.5 * accel * t_hit * t_hit + target * (1.0 - t_hit)
            return gained, target
    return hdot + 0.5 * accel, hdot + accel


def vert_step(s: VState, accel_own: float, accel_int: float, next_adv: int,
              own_target: float | None = None) -> VState:
    climb, hdot_own = own_motion(s.hdot_own, accel_own, own_target)
    h = s.h + s.hdot_int + 0.5 * accel_int - climb
    return VState(h, hdot_own, s.hdot_int + accel_int, max(0, s.tau - 1), int(next_adv))


def complies(adv: int, hdot_own: float) -> bool:
    sense = SENSE[adv]
    return sense != 0 and sense * hdot_own >= sense * TARGET[adv]


def advisory_accel_set(adv: int, hdot_own: float) -> list[float]:
    """Ownship accelerations the table model considers for ``adv``.

    A complying ownship holds its rate; otherwise the advisory's range
    minimum, midpoint and maximum. Overshoot of the target rate is handled in
    the step itself (the rate saturates at the target).
    """
    if complies(adv, hdot_own):
        return [0.0]
    lo, hi = ACC_LO[adv], ACC_HI[adv]
    return [float(lo), float(0.5 * (lo + hi)), float(hi)]


BRANCH_WEIGHTS = (0.25, 0.5, 0.25)


def vert_branches(s: VState, a: int) -> list[tuple[VState, float]]:
    """Successor states before grid snapping (3 or 9 branches)."""
    own = advisory_accel_set(a, s.hdot_own)
    own_w = [1.0] if len(own) == 1 else list(BRANCH_WEIGHTS)
    target = None if SENSE[a] == 0 or len(own) == 1 else float(TARGET[a])
    out = []
    for ao, wo in zip(own, own_w):
        for ai, wi in zip((-G / 8, 0.0, G / 8), BRANCH_WEIGHTS):
            out.append((vert_step(s, ao, ai, a, target), wo * wi))
    return out


def vert_transitions(s: VState, a: int, grid: VGrid) -> list[tuple[VState, float]]:
    """Successor distribution with each branch spread multilinearly over grid points."""
    g = Grid([grid.h, grid.hdot_own, grid.hdot_int])
    merged: dict[tuple, float] = {}
    for nxt, p in vert_branches(s, a):
        for idx, w in g.interp([nxt.h, nxt.hdot_own, nxt.hdot_int]):
            ih, io, ii = g.unravel(idx)
            key = (ih, io, ii, nxt.tau, nxt.s_adv)
            merged[key] = merged.get(key, 0.0) + p * w
    return [(VState(grid.h[ih], grid.hdot_own[io], grid.hdot_int[ii], tau, sa), p)
            for (ih, io, ii, tau, sa), p in sorted(merged.items())]


def vert_reward(s: VState, a: int, costs: Costs = Costs()) -> float:
    r = 0.0
    if abs(s.h) < NMAC_HEIGHT and s.tau == 0:
        r += costs.nmac
    r += _advisory_costs(s.s_adv, a, s.h, costs)
    return r


def _advisory_costs(prev: int, a: int, h: float, costs: Costs) -> float:
    r = 0.0
    if a != VAdvisory.COC:
        r += costs.alert
    if SENSE[a] * SENSE[prev] < 0:
        r += costs.reversal
    elif SENSE[a] != 0 and SENSE[a] == SENSE[prev]:
        if STRENGTH[a] > STRENGTH[prev]:
            r += costs.strengthen
        elif STRENGTH[a] < STRENGTH[prev]:
            r += costs.weaken
    # Commanding a rate toward the intruder's altitude means passing through it.
    if STRENGTH[a] >= 2 and SENSE[a] * h > 0:
        r += costs.crossing
    return r


def vcas_rewards(grid: VGrid, costs: Costs = Costs()) -> np.ndarray:
    """Reward array (num_states, 9) in the table's flat state order."""
    n_t, n_a = grid.tau.size, len(VAdvisory)
    per_adv = np.array([[_advisory_costs(p, a, 0.0, replace(costs, crossing=0.0)) for a in range(n_a)]
                        for p in range(n_a)])
    h = grid.h
    cross = np.array([(STRENGTH[a] >= 2) * (SENSE[a] * h > 0) for a in range(n_a)]).T * costs.crossing
    nmac = (np.abs(h) < NMAC_HEIGHT) * costs.nmac
    r = np.zeros((n_t, n_a, h.size, grid.hdot_own.size, grid.hdot_int.size, n_a))
    r += per_adv[None, :, None, None, None, :]
    r += cross[None, None, :, None, None, :]
    r[0] += nmac[None, :, None, None, None]
    return r.reshape(-1, n_a)


@numba.njit(cache=True)
def _vcas_rows(h_c, ho_c, hi_c, n_tau, n_adv, acc_lo, acc_hi, target, sense, fill,
               offsets, nxt, prb):
    n_h, n_o, n_i = h_c.size, ho_c.size, hi_c.size
    slab = n_h * n_o * n_i
    wts = np.array([0.25, 0.5, 0.25])
    aint = np.array([-32.2 / 8, 0.0, 32.2 / 8])
    idx = np.empty(128, dtype=np.int64)
    w = np.empty(128)
    row = 0
    pos = 0
    for it in range(n_tau):
        it_next = max(it - 1, 0)
        for sp in range(n_adv):
            for ih in range(n_h):
                for io in range(n_o):
                    for ii in range(n_i):
                        h, ho, hi = h_c[ih], ho_c[io], hi_c[ii]
                        for a in range(n_adv):
                            base = (it_next * n_adv + a) * slab
                            lo, up = acc_lo[a], acc_hi[a]
                            comply = sense[a] != 0 and sense[a] * ho >= sense[a] * target[a]
                            n_own = 1 if comply else 3
                            m = 0
                            for k in range(n_own):
                                if comply:
                                    ao, wo = 0.0, 1.0
                                else:
                                    ao = lo if k == 0 else (0.5 * (lo + up) if k == 1 else up)
                                    wo = wts[k]
                                climb, ho2 = ho + 0.5 * ao, ho + ao
                                if sense[a] != 0 and not comply and ao != 0.0:
                                    t_hit = (target[a] - ho) / ao
                                    if 0.0 <= t_hit < 1.0:
                                        climb = ho * t_hit + 0.5 * ao * t_hit * t_hit + target[a] * (1.0 - t_hit)
                                        ho2 = target[a]
                                for j in range(3):
                                    ai = aint[j]
                                    p = wo * wts[j]
                                    h2 = h + hi + 0.5 * ai - climb
                                    hi2 = hi + ai
                                    l0, u0, f0 = _bracket(h_c, h2)
                                    l1, u1, f1 = _bracket(ho_c, ho2)
                                    l2, u2, f2 = _bracket(hi_c, hi2)
                                    for c in range(8):
                                        i0 = u0 if c & 4 else l0
                                        w0 = f0 if c & 4 else 1.0 - f0
                                        i1 = u1 if c & 2 else l1
                                        w1 = f1 if c & 2 else 1.0 - f1
                                        i2 = u2 if c & 1 else l2
                                        w2 = f2 if c & 1 else 1.0 - f2
                                        q = p * w0 * w1 * w2
                                        if q <= 0.0:
                                            continue
                                        flat = base + (i0 * n_o + i1) * n_i + i2
                                        found = False
                                        for e in range(m):
                                            if idx[e] == flat:
                                                w[e] += q
                                                found = True
                                                break
                                        if not found:
                                            idx[m] = flat
                                            w[m] = q
                                            m += 1
                            if fill:
                                order = np.argsort(idx[:m])
                                for e in range(m):
                                    nxt[pos + e] = idx[order[e]]
                                    prb[pos + e] = w[order[e]]
                            pos += m
                            row += 1
                            offsets[row] = pos
    return pos


def build_vcas_mdp(grid: VGrid, costs: Costs = Costs(), terminal_discount: float = 0.95,
                   memory_budget: float = 3e9) -> Mdp:
    """Table MDP over ``grid`` x previous advisory.

    Slices with tau >= 1 are undiscounted: tau strictly counts down, so they
    form a finite-horizon problem. The tau = 0 slice loops on itself and is
    discounted by ``terminal_discount``.
    """
    n_s, n_a = grid.num_states, len(VAdvisory)
    # Rough upper estimate: ~18 merged successors per row, 12 bytes each, plus rewards.
    need = n_s * n_a * (18 * 12 + 8)
    if need > memory_budget:
        raise CapacityError(f"{n_s} states need ~{need / 1e9:.1f} GB, budget is {memory_budget / 1e9:.1f} GB")
    args = (grid.h, grid.hdot_own, grid.hdot_int, grid.tau.size, n_a, ACC_LO, ACC_HI, TARGET,
            SENSE.astype(np.float64))
    offsets = np.zeros(n_s * n_a + 1, dtype=np.int64)
    total = _vcas_rows(*args, False, offsets, np.empty(0, np.int64), np.empty(0))
    nxt = np.empty(total, dtype=np.int64)
    prb = np.empty(total)
    _vcas_rows(*args, True, offsets, nxt, prb)
    discount = np.ones(n_s)
    discount[: n_s // grid.tau.size] = terminal_discount
    return Mdp(n_s, n_a, offsets, nxt, prb, vcas_rewards(grid, costs), discount)


def state_index(grid: VGrid, s: VState) -> int:
    """Flat index of an on-grid state."""
    def find(cuts, v):
        i = int(np.argmin(np.abs(cuts - v)))
        if abs(cuts[i] - v) > 1e-9 * max(1.0, abs(v)):
            raise ContractError(f"value {v} is not a grid point")
        return i
    return grid.grid.ravel((int(s.tau), s.s_adv, find(grid.h, s.h), find(grid.hdot_own, s.hdot_own),
                            find(grid.hdot_int, s.hdot_int)))


def training_set(q: QTable, s_adv: int, hdot_int: float = 0.0):
    """Inputs (h, hdot_own, tau) and scores for one previous advisory.

    The intruder-rate dimension is dropped by taking the table slice at the
    cut point nearest ``hdot_int``.
    """
    if q.grid is None or q.grid.names != ["tau", "s_adv", "h", "hdot_own", "hdot_int"]:
        raise ContractError("table must be indexed (tau, s_adv, h, hdot_own, hdot_int)")
    tau, sadv, h, own, intr = q.grid.cuts
    if not 0 <= s_adv < sadv.size:
        raise ContractError(f"s_adv {s_adv} out of range")
    ii = int(np.argmin(np.abs(intr - hdot_int)))
    vals = q.values.reshape(tau.size, sadv.size, h.size, own.size, intr.size, q.values.shape[1])
    scores = vals[:, s_adv, :, :, ii, :].reshape(-1, q.values.shape[1])
    T, H, O = np.meshgrid(tau, h, own, indexing="ij")
    return np.stack([H.ravel(), O.ravel(), T.ravel()], axis=1), scores.copy()
