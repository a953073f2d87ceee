"""HorizontalCAS: turn-rate advisories in relative polar coordinates.

Angles are radians internally and turn-rate tables are listed in deg/s.
Positive turn rates turn left (counter-clockwise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numba
import numpy as np

from .costs import Costs
from .mdp import CapacityError, ContractError, Grid, Mdp, QTable, _bracket

NMAC_RANGE = 500.0
SMALL_TURN = 1e-6
CONFLICT_MISS = 4000.0
NETWORK_TAUS = (0, 5, 10, 15, 20, 30, 40, 60)


class HAdvisory(IntEnum):
    COC = 0
    WL = 1
    WR = 2
    SL = 3
    SR = 4


TURN_DEG = {
    HAdvisory.COC: (-1.5, 1.5),
    HAdvisory.WL: (1.0, 2.0),
    HAdvisory.WR: (-2.0, -1.0),
    HAdvisory.SL: (2.0, 4.0),
    HAdvisory.SR: (-4.0, -2.0),
}
SENSE = np.array([0, 1, -1, 1, -1])
STRENGTH = np.array([0, 1, 1, 2, 2])
TURN_LO = np.radians([TURN_DEG[a][0] for a in HAdvisory])
TURN_HI = np.radians([TURN_DEG[a][1] for a in HAdvisory])
INTRUDER_TURNS = np.radians([-1.0, 0.0, 1.0])
WEIGHTS = np.array([0.25, 0.5, 0.25])


def wrap(angle):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(angle, dtype=np.float64)
    out = np.pi - np.mod(np.pi - a, 2 * np.pi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class HState:
    rho: float
    theta: float
    psi: float
    tau: int
    s_adv: int = 0
    v_own: float = 200.0
    v_int: float = 185.0

    def __post_init__(self):
        if self.rho < 0:
            raise ContractError("rho must be nonnegative")
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ContractError("tau must be a nonnegative integer")
        if not 0 <= self.s_adv < len(HAdvisory):
            raise ContractError(f"s_adv {self.s_adv} out of range")
        object.__setattr__(self, "theta", wrap(self.theta))
        object.__setattr__(self, "psi", wrap(self.psi))


def to_cartesian(rho, theta, psi):
    rho, theta = np.asarray(rho, float), np.asarray(theta, float)
    return rho * np.cos(theta), rho * np.sin(theta), np.asarray(psi, float)


def to_polar(x, y, psi):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return np.hypot(x, y), np.arctan2(y, x), np.asarray(psi, float)


def _sinc_terms(u: float) -> tuple[float, float]:
    """(sin u / u, (1 - cos u) / u) with series limits near zero."""
    if abs(u) < SMALL_TURN:
        return 1.0 - u * u / 6.0, u / 2.0
    return math.sin(u) / u, (1.0 - math.cos(u)) / u


def hor_positions(s: HState, u_own: float, u_int: float):
    """Ownship and intruder positions after one second, ownship starting at the origin."""
    so, co = _sinc_terms(u_own)
    own = (s.v_own * so, s.v_own * co)
    x_int, y_int = s.rho * math.cos(s.theta), s.rho * math.sin(s.theta)
    if abs(u_int) < SMALL_TURN:
        # Series in u_int of the exact integrals, accurate to O(u^2).
        dx = math.cos(s.psi) - 0.5 * u_int * math.sin(s.psi)
        dy = math.sin(s.psi) + 0.5 * u_int * math.cos(s.psi)
    else:
        dx = (math.sin(s.psi + u_int) - math.sin(s.psi)) / u_int
        dy = (math.cos(s.psi) - math.cos(s.psi + u_int)) / u_int
    return own, (x_int + s.v_int * dx, y_int + s.v_int * dy)


def hor_step(s: HState, u_own: float, u_int: float, next_adv: int) -> HState:
    (xo, yo), (xi, yi) = hor_positions(s, u_own, u_int)
    dx, dy = xi - xo, yi - yo
    return HState(math.hypot(dx, dy), wrap(math.atan2(dy, dx) - u_own), wrap(s.psi + u_int - u_own),
                  max(0, s.tau - 1), int(next_adv), s.v_own, s.v_int)


def turn_set(a: int) -> np.ndarray:
    """Ownship {min, mid, max} turn rates (rad/s) modeled for advisory ``a``."""
    lo, hi = TURN_LO[a], TURN_HI[a]
    return np.array([lo, 0.5 * (lo + hi), hi])


def hor_branches(s: HState, a: int) -> list[tuple[HState, float]]:
    return [(hor_step(s, uo, ui, a), wo * wi)
            for uo, wo in zip(turn_set(a), WEIGHTS) for ui, wi in zip(INTRUDER_TURNS, WEIGHTS)]


@dataclass
class HGrid:
    rho: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    tau: np.ndarray
    v_own: float = 200.0
    v_int: float = 185.0

    def __post_init__(self):
        for k in ("rho", "theta", "psi", "tau"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=np.float64))
        if self.rho.min() < 0:
            raise ContractError("rho cut points must be nonnegative")
        for k in ("theta", "psi"):
            v = getattr(self, k)
            if v.min() < -np.pi - 1e-12 or v.max() > np.pi + 1e-12:
                raise ContractError(f"{k} cut points must lie in [-pi, pi]")
        if not np.array_equal(self.tau, np.arange(self.tau.size)):
            raise ContractError("tau cut points must be 0, 1, ..., T")
        self.grid

    @property
    def grid(self) -> Grid:
        return Grid([self.tau, np.arange(len(HAdvisory), dtype=float), self.rho, self.theta, self.psi],
                    ["tau", "s_adv", "rho", "theta", "psi"])

    @property
    def num_states(self) -> int:
        return self.tau.size * len(HAdvisory) * self.rho.size * self.theta.size * self.psi.size

    @property
    def slice_size(self) -> int:
        return self.rho.size * self.theta.size * self.psi.size

    @classmethod
    def paper(cls) -> "HGrid":
        rho = [0, 25, 50, 75, 100, 150, 200, 300, 400, 500, 600, 750, 1000, 1500, 2000, 3000, 4000,
               5000, 7000, 9000, 11000, 13000, 15000, 17000, 19000, 21000, 25000, 30000, 35000,
               40000, 45000, 50000]
        ang = np.linspace(-np.pi, np.pi, 41)
        return cls(np.array(rho, float), ang, ang, np.arange(81))

    @classmethod
    def desk(cls) -> "HGrid":
        rho = [0, 200, 500, 800, 1200, 2000, 3000, 4500, 6500, 9000, 13000, 18000, 25000, 35000, 50000]
        ang = np.linspace(-np.pi, np.pi, 13)
        return cls(np.array(rho, float), ang, ang, np.arange(21))


def collision_course(rho: float, theta: float, psi: float, tau: float, v_own=200.0, v_int=185.0) -> bool:
    """Straight-line extrapolation reaches closest approach within tau at under 4000 ft miss."""
    rx, ry = rho * math.cos(theta), rho * math.sin(theta)
    vx, vy = v_int * math.cos(psi) - v_own, v_int * math.sin(psi)
    vv = vx * vx + vy * vy
    if vv == 0.0:
        return False
    t = -(rx * vx + ry * vy) / vv
    if t <= 0.0 or t >= tau:
        return False
    return math.hypot(rx + t * vx, ry + t * vy) < CONFLICT_MISS


def _advisory_costs(prev: int, a: int, costs: Costs) -> float:
    r = 0.0
    if a != HAdvisory.COC:
        r += costs.alert
    if SENSE[a] * SENSE[prev] < 0:
        r += costs.reversal
    elif SENSE[a] != 0 and SENSE[a] == SENSE[prev]:
        if STRENGTH[a] > STRENGTH[prev]:
            r += costs.strengthen
        elif STRENGTH[a] < STRENGTH[prev]:
            r += costs.weaken
    return r


def hor_reward(s: HState, a: int, costs: Costs = Costs()) -> float:
    r = _advisory_costs(s.s_adv, a, costs)
    if s.rho < NMAC_RANGE and s.tau == 0:
        r += costs.nmac
    if a == HAdvisory.COC and s.s_adv != HAdvisory.COC and \
            collision_course(s.rho, s.theta, s.psi, s.tau, s.v_own, s.v_int):
        r += costs.coc_conflict
    return r


def hcas_rewards(grid: HGrid, costs: Costs = Costs()) -> np.ndarray:
    n_t, n_a = grid.tau.size, len(HAdvisory)
    per_adv = np.array([[_advisory_costs(p, a, costs) for a in range(n_a)] for p in range(n_a)])
    R = np.zeros((n_t, n_a, grid.rho.size, grid.theta.size, grid.psi.size, n_a))
    R += per_adv[None, :, None, None, None, :]
    R[0, :, grid.rho < NMAC_RANGE] += costs.nmac
    conflict = np.array([[[[collision_course(r, th, ps, t, grid.v_own, grid.v_int) for ps in grid.psi]
                           for th in grid.theta] for r in grid.rho] for t in grid.tau])
    prev_alert = np.arange(n_a) != HAdvisory.COC
    R[..., HAdvisory.COC] += costs.coc_conflict * (conflict[:, None] & prev_alert[None, :, None, None, None])
    return R.reshape(-1, n_a)


def hor_transitions(s: HState, a: int, grid: HGrid) -> list[tuple[HState, float]]:
    g = Grid([grid.rho, grid.theta, grid.psi])
    merged: dict[tuple, float] = {}
    for nxt, p in hor_branches(s, a):
        for idx, w in g.interp([nxt.rho, nxt.theta, nxt.psi]):
            key = g.unravel(idx) + (nxt.tau, nxt.s_adv)
            merged[key] = merged.get(key, 0.0) + p * w
    return [(HState(grid.rho[i], grid.theta[j], grid.psi[k], tau, sa, s.v_own, s.v_int), p)
            for (i, j, k, tau, sa), p in sorted(merged.items())]


@numba.njit(cache=True)
def _hcas_rows(r_c, t_c, p_c, n_tau, n_adv, lo_t, hi_t, ui_set, v_own, v_int, fill, offsets, nxt, prb):
    n_r, n_t, n_p = r_c.size, t_c.size, p_c.size
    slab = n_r * n_t * n_p
    wts = np.array([0.25, 0.5, 0.25])
    idx = np.empty(128, dtype=np.int64)
    w = np.empty(128)
    pos = 0
    row = 0
    two_pi = 2.0 * np.pi
    for it in range(n_tau):
        it_next = max(it - 1, 0)
        for sp in range(n_adv):
            for ir in range(n_r):
                for ith in range(n_t):
                    for ip in range(n_p):
                        rho, th, ps = r_c[ir], t_c[ith], p_c[ip]
                        xi0, yi0 = rho * np.cos(th), rho * np.sin(th)
                        for a in range(n_adv):
                            base = (it_next * n_adv + a) * slab
                            m = 0
                            for k in range(3):
                                uo = lo_t[a] if k == 0 else (0.5 * (lo_t[a] + hi_t[a]) if k == 1 else hi_t[a])
                                if abs(uo) < 1e-6:
                                    so, co = 1.0 - uo * uo / 6.0, uo / 2.0
                                else:
                                    so, co = np.sin(uo) / uo, (1.0 - np.cos(uo)) / uo
                                xo, yo = v_own * so, v_own * co
                                for j in range(3):
                                    ui = ui_set[j]
                                    p = wts[k] * wts[j]
                                    if abs(ui) < 1e-6:
                                        ddx = np.cos(ps) - 0.5 * ui * np.sin(ps)
                                        ddy = np.sin(ps) + 0.5 * ui * np.cos(ps)
                                    else:
                                        ddx = (np.sin(ps + ui) - np.sin(ps)) / ui
                                        ddy = (np.cos(ps) - np.cos(ps + ui)) / ui
                                    dx = xi0 + v_int * ddx - xo
                                    dy = yi0 + v_int * ddy - yo
                                    r2 = np.sqrt(dx * dx + dy * dy)
                                    t2 = np.arctan2(dy, dx) - uo
                                    t2 = np.pi - ((np.pi - t2) % two_pi)
                                    p2 = ps + ui - uo
                                    p2 = np.pi - ((np.pi - p2) % two_pi)
                                    l0, u0, f0 = _bracket(r_c, r2)
                                    l1, u1, f1 = _bracket(t_c, t2)
                                    l2, u2, f2 = _bracket(p_c, p2)
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
                                        flat = base + (i0 * n_t + i1) * n_p + i2
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


def build_hcas_mdp(grid: HGrid, costs: Costs = Costs(), terminal_discount: float = 0.95,
                   memory_budget: float = 3e9) -> Mdp:
    """Table MDP over ``grid`` x previous advisory; discounting as in the vertical model."""
    n_s, n_a = grid.num_states, len(HAdvisory)
    need = n_s * n_a * (30 * 12 + 8)
    if need > memory_budget:
        raise CapacityError(f"{n_s} states need ~{need / 1e9:.1f} GB, budget is {memory_budget / 1e9:.1f} GB")
    args = (grid.rho, grid.theta, grid.psi, grid.tau.size, n_a, TURN_LO, TURN_HI, INTRUDER_TURNS,
            float(grid.v_own), float(grid.v_int))
    offsets = np.zeros(n_s * n_a + 1, dtype=np.int64)
    total = _hcas_rows(*args, False, offsets, np.empty(0, np.int64), np.empty(0))
    nxt = np.empty(total, dtype=np.int64)
    prb = np.empty(total)
    _hcas_rows(*args, True, offsets, nxt, prb)
    discount = np.ones(n_s)
    discount[: n_s // grid.tau.size] = terminal_discount
    return Mdp(n_s, n_a, offsets, nxt, prb, hcas_rewards(grid, costs), discount)


def state_index(grid: HGrid, s: HState) -> int:
    def find(cuts, v):
        i = int(np.argmin(np.abs(cuts - v)))
        if abs(cuts[i] - v) > 1e-9 * max(1.0, abs(v)):
            raise ContractError(f"value {v} is not a grid point")
        return i
    return grid.grid.ravel((int(s.tau), s.s_adv, find(grid.rho, s.rho), find(grid.theta, s.theta),
                            find(grid.psi, s.psi)))


def network_tau(tau: float, available=NETWORK_TAUS) -> int:
    """Largest network tau not above ``tau`` (rounding down)."""
    below = [t for t in available if t <= tau]
    if not below:
        raise ContractError(f"no network for tau={tau}")
    return max(below)


def to_cartesian_training_set(q: QTable, tau_slice: int, s_adv: int):
    """Inputs (x, y, psi) and per-advisory scores for one (tau, s_adv) table slice.

    ``tau_slice`` is rounded down to the largest tau present in the table.
    """
    if q.grid is None or q.grid.names[:2] != ["tau", "s_adv"]:
        raise ContractError("table must be indexed (tau, s_adv, ...)")
    taus = q.grid.cuts[0]
    t_idx = int(np.searchsorted(taus, tau_slice, side="right") - 1)
    if t_idx < 0:
        raise ContractError(f"tau {tau_slice} below the table's range")
    n_sadv = q.grid.shape[1]
    if not 0 <= s_adv < n_sadv:
        raise ContractError(f"s_adv {s_adv} out of range")
    rest = Grid(q.grid.cuts[2:], q.grid.names[2:])
    start = (t_idx * n_sadv + s_adv) * rest.size
    scores = q.values[start:start + rest.size]
    pts = rest.points()
    x, y, psi = to_cartesian(pts[:, 0], pts[:, 1], pts[:, 2])
    return np.stack([x, y, psi], axis=1), scores.copy()
