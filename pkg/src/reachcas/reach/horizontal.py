"""Horizontal encounter reachability: (x, y, psi) cells tagged with tau."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hcas import NETWORK_TAUS, NMAC_RANGE, SENSE, HAdvisory, network_tau
from ..mdp import ContractError
from ..nnet import Network
from ..verifier import batch_verify
from .bounds import hor_reach_bounds
from .cells import CellGrid
from .engine import ReachModel, Successors

# Nominal ownship turn rate per advisory (deg/s, positive left); delta widens both ends.
REACH_TURN_DEG = {
    HAdvisory.COC: (0.0, 0.0),
    HAdvisory.WL: (1.5, 1.5),
    HAdvisory.WR: (-1.5, -1.5),
    HAdvisory.SL: (3.5, 3.5),
    HAdvisory.SR: (-3.5, -3.5),
}
RING_RADIUS = 48000.0


def turn_limits(adv: int, delta: float = 0.0) -> tuple[float, float]:
    """Ownship turn-rate interval in rad/s."""
    if delta < 0:
        raise ContractError("delta must be non-negative")
    lo, hi = REACH_TURN_DEG[HAdvisory(adv)]
    return float(np.radians(lo - delta)), float(np.radians(hi + delta))


def intruder_limits(delta: float = 0.0) -> tuple[float, float]:
    return float(np.radians(-delta)), float(np.radians(delta))


def _sym(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.unique(np.concatenate([-v, v]))


@dataclass
class HReachGrid:
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    tau_max: int
    v_own: float = 200.0
    v_int: float = 185.0
    ring: float = RING_RADIUS

    def __post_init__(self):
        self.x, self.y, self.psi = (np.asarray(v, dtype=np.float64) for v in (self.x, self.y, self.psi))
        if self.tau_max < 0:
            raise ContractError("tau_max must be >= 0")
        self.cells

    @property
    def cells(self) -> CellGrid:
        return CellGrid([self.x, self.y, self.psi], ["x", "y", "psi"], [False, False, True])

    @property
    def num_cells(self) -> int:
        """Cells in network-input space; tau only selects which network is queried."""
        return self.cells.size

    @classmethod
    def desk(cls, tau_max: int = 20) -> "HReachGrid":
        xy = _sym([0, 500, 1000, 1500, 2000, 3000, 4000, 5500, 7500, 10000, 13000, 17000, 22000,
                   28000, 35000, 42000, 50000])
        return cls(xy, xy, np.linspace(-np.pi, np.pi, 25), tau_max)

    @classmethod
    def paper(cls) -> "HReachGrid":
        # 454 x 454 position segments and one-degree headings: about 74.2 million cells
        xy = _sym(np.concatenate([np.arange(0, 5000, 100), 5000 * 12.0 ** (np.arange(0, 178) / 177)]))
        return cls(xy, xy, np.linspace(-np.pi, np.pi, 361), 80)


def box_distances(lo: np.ndarray, hi: np.ndarray, center=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Nearest and farthest distance from ``center`` to each (x, y) box."""
    cx, cy = center
    nx = np.clip(cx, lo[:, 0], hi[:, 0]) - cx
    ny = np.clip(cy, lo[:, 1], hi[:, 1]) - cy
    fx = np.maximum(np.abs(lo[:, 0] - cx), np.abs(hi[:, 0] - cx))
    fy = np.maximum(np.abs(lo[:, 1] - cy), np.abs(hi[:, 1] - cy))
    return np.hypot(nx, ny), np.hypot(fx, fy)


def safe_region_init(grid: HReachGrid, t: float, d: float, v_own: float | None = None) -> np.ndarray:
    """Cells with some point satisfying (x - v t)^2 + y^2 >= (v t + d)^2.

    These are the states from which the ownship flying straight for ``t``
    seconds cannot come within ``d`` of a stationary point; cells wholly
    inside the disc are left out of the initial set.
    """
    v = grid.v_own if v_own is None else v_own
    lo, hi = grid.cells.boxes()
    _, far = box_distances(lo, hi, (v * t, 0.0))
    return far >= v * t + d


def inflate_cells_for_sensor_error(lo: np.ndarray, hi: np.ndarray, fraction: float):
    """Push x/y bounds out by ``fraction`` of the range to the box center; psi untouched."""
    if fraction < 0:
        raise ContractError("sensor error fraction must be non-negative")
    lo = np.array(lo, dtype=np.float64)
    hi = np.array(hi, dtype=np.float64)
    r = np.hypot((lo[:, 0] + hi[:, 0]) / 2, (lo[:, 1] + hi[:, 1]) / 2) * fraction
    lo[:, :2] -= r[:, None]
    hi[:, :2] += r[:, None]
    return lo, hi


def horizontal_successors(grid: HReachGrid, delta: float = 0.0) -> Successors:
    ui = intruder_limits(delta)

    def bounds(lo, hi, a):
        return hor_reach_bounds((lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2]), turn_limits(a, delta), ui,
                                grid.v_own, grid.v_int)

    return Successors.build(grid.cells, bounds, len(HAdvisory))


def network_taus(grid: HReachGrid, available=NETWORK_TAUS) -> list[int]:
    return sorted({network_tau(t, available) for t in range(grid.tau_max + 1)})


def horizontal_network_sets(grid: HReachGrid, nets: dict[tuple[int, int], Network], split_budget: int = 6,
                            threads: int = 1, sensor_error: float = 0.0, checkpoint_dir=None,
                            progress=None) -> dict[tuple[int, int], np.ndarray]:
    """Advisory sets (cell, advisory) for each network the grid's tau range needs."""
    available = sorted({t for _, t in nets})
    lo, hi = inflate_cells_for_sensor_error(*grid.cells.boxes(), sensor_error)
    out = {}
    for p in range(len(HAdvisory)):
        for nt in network_taus(grid, available):
            net = nets.get((p, nt))
            if net is None:
                raise ContractError(f"missing network for s_adv={p}, tau={nt}")
            if net.num_inputs != 3 or net.num_outputs != len(HAdvisory):
                raise ContractError(f"network ({p}, {nt}) must map 3 inputs to {len(HAdvisory)} scores")
            ck = None if checkpoint_dir is None else f"{checkpoint_dir}/verify_{p}_{nt}.ckpt"
            out[p, nt] = batch_verify(net, lo, hi, split_budget, checkpoint=ck, threads=threads,
                                      progress=progress)
    return out


def expand_horizontal_cache(grid: HReachGrid, per_net: dict[tuple[int, int], np.ndarray]) -> np.ndarray:
    """Spread per-network sets over tau: shape (s_adv, tau, cell, advisory)."""
    available = sorted({t for _, t in per_net})
    n_adv = len(HAdvisory)
    out = np.zeros((n_adv, grid.tau_max + 1, grid.cells.size, n_adv), dtype=bool)
    for p in range(n_adv):
        for t in range(grid.tau_max + 1):
            sets = per_net.get((p, network_tau(t, available)))
            if sets is None:
                raise ContractError(f"missing advisory sets for s_adv={p}, tau={t}")
            out[p, t] = sets
    return out


def horizontal_cache(grid: HReachGrid, nets: dict[tuple[int, int], Network], **kw) -> np.ndarray:
    """Advisory sets (s_adv, tau, cell, advisory) from networks keyed by (s_adv, network tau)."""
    return expand_horizontal_cache(grid, horizontal_network_sets(grid, nets, **kw))


def horizontal_model(grid: HReachGrid, cache: np.ndarray, delta: float = 0.0, succ: Successors | None = None,
                     initial: np.ndarray | None = None) -> ReachModel:
    cells = grid.cells
    lo, hi = cells.boxes()
    near, far = box_distances(lo, hi)
    nmac = near < NMAC_RANGE
    boundary = (near <= grid.ring) & (far >= grid.ring)
    inside = near <= grid.ring
    initial = inside if initial is None else (initial & inside)
    if succ is None:
        succ = horizontal_successors(grid, delta)
    expected = (len(HAdvisory), grid.tau_max + 1, cells.size, len(HAdvisory))
    if cache.shape != expected:
        raise ContractError(f"advisory cache has shape {cache.shape}, grid needs {expected}")
    return ReachModel(cells, succ, cache, nmac, near, boundary, initial, SENSE.astype(np.int64),
                      coc=int(HAdvisory.COC), names=[a.name for a in HAdvisory])
