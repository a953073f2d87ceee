"""Vertical encounter reachability: (h, hdot_own) cells tagged with tau."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import ContractError
from ..nnet import Network
from ..vcas import FPM, NMAC_HEIGHT, SENSE, VAdvisory
from ..verifier import batch_verify
from .bounds import vert_reach_bounds
from .cells import CellGrid
from .engine import ReachModel, Successors

# Nominal ownship acceleration per advisory (ft/s^2); delta widens both ends.
REACH_ACCEL = {
    VAdvisory.COC: (-3.0, 3.0),
    VAdvisory.DNC: (-12.2, -12.2),
    VAdvisory.DND: (12.2, 12.2),
    VAdvisory.DES1500: (-12.2, -12.2),
    VAdvisory.CL1500: (12.2, 12.2),
    VAdvisory.SDES1500: (-13.4, -13.4),
    VAdvisory.SCL1500: (13.4, 13.4),
    VAdvisory.SDES2500: (-13.4, -13.4),
    VAdvisory.SCL2500: (13.4, 13.4),
}


def accel_limits(adv: int, delta: float = 0.0) -> tuple[float, float]:
    if delta < 0:
        raise ContractError("delta must be non-negative")
    lo, hi = REACH_ACCEL[VAdvisory(adv)]
    return lo - delta, hi + delta


def _geometric_cuts(inner: float, outer: float, n: int) -> np.ndarray:
    """n cut points in (inner, outer], spacing growing geometrically."""
    return inner * (outer / inner) ** (np.arange(1, n + 1) / n)


@dataclass
class VReachGrid:
    h: np.ndarray
    hdot: np.ndarray  # ft/s
    tau_max: int

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.hdot = np.asarray(self.hdot, dtype=np.float64)
        if self.tau_max < 0:
            raise ContractError("tau_max must be >= 0")
        self.cells  # validates cut points

    @property
    def cells(self) -> CellGrid:
        return CellGrid([self.h, self.hdot], ["h", "hdot_own"])

    @property
    def num_cells(self) -> int:
        """Cells including the tau tag."""
        return self.cells.size * (self.tau_max + 1)

    @property
    def hdot_limit(self) -> float:
        return float(max(-self.hdot[0], self.hdot[-1]))

    @classmethod
    def desk(cls, tau_max: int = 20) -> "VReachGrid":
        # 10 ft cells near co-altitude: coarser cells keep slow trajectories stuck in one cell
        inner = np.arange(-600.0, 601.0, 10.0)
        outer = _geometric_cuts(600.0, 3000.0, 40)
        h = np.concatenate([-outer[::-1], inner, outer])
        return cls(h, np.linspace(-2500, 2500, 44) * FPM, tau_max)

    @classmethod
    def paper(cls) -> "VReachGrid":
        inner = np.arange(-1000.0, 1001.0, 10.0)
        outer = _geometric_cuts(1000.0, 3000.0, 90)
        h = np.concatenate([-outer[::-1], inner, outer])
        return cls(h, np.linspace(-2500, 2500, 44) * FPM, 39)


def vertical_successors(grid: VReachGrid, delta: float = 0.0, saturate: bool = True) -> Successors:
    limit = grid.hdot_limit if saturate else None

    def bounds(lo, hi, a):
        return vert_reach_bounds((lo[0], hi[0]), (lo[1], hi[1]), accel_limits(a, delta), limit)

    return Successors.build(grid.cells, bounds, len(VAdvisory))


def cache_boxes(grid: VReachGrid) -> tuple[np.ndarray, np.ndarray]:
    """Network input boxes (h, hdot_own, tau), ordered tau-major then cell."""
    lo, hi = grid.cells.boxes()
    n = lo.shape[0]
    taus = np.repeat(np.arange(grid.tau_max + 1, dtype=np.float64), n)
    return (np.column_stack([np.tile(lo, (grid.tau_max + 1, 1)), taus]),
            np.column_stack([np.tile(hi, (grid.tau_max + 1, 1)), taus]))


def vertical_cache(grid: VReachGrid, nets: list[Network], split_budget: int = 6, threads: int = 1,
                   checkpoint_dir=None, progress=None) -> np.ndarray:
    """Advisory sets, shape (s_adv, tau, cell, advisory)."""
    if len(nets) != len(VAdvisory):
        raise ContractError(f"need one network per previous advisory ({len(VAdvisory)}), got {len(nets)}")
    lo, hi = cache_boxes(grid)
    out = []
    for p, net in enumerate(nets):
        if net.num_inputs != 3 or net.num_outputs != len(VAdvisory):
            raise ContractError(f"network {p} must map 3 inputs to {len(VAdvisory)} scores")
        ck = None if checkpoint_dir is None else f"{checkpoint_dir}/verify_{p}.ckpt"
        out.append(batch_verify(net, lo, hi, split_budget, checkpoint=ck, threads=threads, progress=progress))
    return np.stack(out).reshape(len(nets), grid.tau_max + 1, grid.cells.size, len(VAdvisory))


def vertical_model(grid: VReachGrid, cache: np.ndarray, delta: float = 0.0,
                   succ: Successors | None = None, saturate: bool = True) -> ReachModel:
    cells = grid.cells
    lo, hi = cells.boxes()
    h_lo, h_hi = lo[:, 0], hi[:, 0]
    nmac = (h_lo < NMAC_HEIGHT) & (h_hi > -NMAC_HEIGHT)
    sep = np.where((h_lo <= 0) & (h_hi >= 0), 0.0, np.minimum(np.abs(h_lo), np.abs(h_hi)))
    boundary = (h_lo == grid.h[0]) | (h_hi == grid.h[-1])
    if succ is None:
        succ = vertical_successors(grid, delta, saturate)
    expected = (len(VAdvisory), grid.tau_max + 1, cells.size, len(VAdvisory))
    if cache.shape != expected:
        raise ContractError(f"advisory cache has shape {cache.shape}, grid needs {expected}")
    return ReachModel(cells, succ, cache, nmac, sep, boundary, sense=SENSE.astype(np.int64),
                      coc=int(VAdvisory.COC), names=[a.name for a in VAdvisory])
