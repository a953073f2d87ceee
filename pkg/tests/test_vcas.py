import numpy as np
import pytest

from reachcas.costs import Costs
from reachcas.mdp import CapacityError, ContractError
from reachcas.vcas import (
    ACCEL, FPM, G, VAdvisory, VGrid, VState, advisory_accel_set, build_vcas_mdp, state_index,
    vcas_rewards, vert_branches, vert_reward, vert_step, vert_transitions,
)


@pytest.fixture(scope="module")
def small_grid():
    return VGrid(np.array([-1000, -300, -100, 0, 100, 300, 1000.0]),
                 np.array([-3000, -1500, 0, 1500, 3000]) * FPM,
                 np.array([-2500, 0, 2500]) * FPM, np.arange(4))


@pytest.fixture(scope="module")
def small_mdp(small_grid):
    return build_vcas_mdp(small_grid)


class TestStep:
    def test_zero_state(self):
        s = vert_step(VState(0, 0, 0, 5), 0, 0, 0)
        assert (s.h, s.hdot_own, s.hdot_int, s.tau) == (0, 0, 0, 4)

    def test_climbing_ownship(self):
        s = vert_step(VState(1000, 0, 0, 5), 8.33, 0, VAdvisory.CL1500)
        assert s.h == pytest.approx(995.835, abs=1e-12)
        assert s.hdot_own == pytest.approx(8.33)
        assert s.s_adv == VAdvisory.CL1500

    def test_tau_floor(self):
        assert vert_step(VState(0, 0, 0, 0), 0, 0, 0).tau == 0

    @pytest.mark.parametrize("seed", range(20))
    def test_coupled_quantity_conserved_level_intruder(self, seed):
        rng = np.random.default_rng(seed)
        s = VState(rng.uniform(-3000, 3000), rng.uniform(-40, 40), 0.0, 3)
        n = vert_step(s, rng.uniform(-16, 16), 0.0, 0)
        assert 2 * n.h + n.hdot_own == pytest.approx(2 * s.h - s.hdot_own, abs=1e-9)

    def test_saturation_reaches_target_exactly(self):
        # 20 ft/s + 16.2 would overshoot 25 ft/s: accelerate for 5/16.2 s then hold.
        s = vert_step(VState(0, 20, 0, 3), 16.2, 0, VAdvisory.CL1500, own_target=25.0)
        t = 5 / 16.2
        assert s.hdot_own == 25.0
        assert s.h == pytest.approx(-(20 * t + 0.5 * 16.2 * t * t + 25 * (1 - t)))

    def test_invalid_state(self):
        with pytest.raises(ContractError):
            VState(0, 0, 0, -1)
        with pytest.raises(ContractError):
            VState(0, 0, 0, 1, 9)


class TestAccelSet:
    def test_complying_holds_rate(self):
        assert advisory_accel_set(VAdvisory.CL1500, 30.0) == [0.0]

    def test_noncomplying_three_points(self):
        assert advisory_accel_set(VAdvisory.CL1500, 0.0) == pytest.approx([8.33, 12.265, 16.2])

    @pytest.mark.parametrize("rate", [-50.0, 0.0, 33.0])
    def test_coc_never_collapses(self, rate):
        assert advisory_accel_set(VAdvisory.COC, rate) == [-10.7, 0.0, 10.7]

    def test_table_intervals(self):
        assert ACCEL[VAdvisory.COC] == (-10.7, 10.7)
        assert ACCEL[VAdvisory.CL1500] == (8.33, 16.2)
        assert ACCEL[VAdvisory.SDES2500] == (-16.2, -10.7)

    def test_dnc_complies_when_not_climbing(self):
        assert advisory_accel_set(VAdvisory.DNC, -5.0) == [0.0]
        assert len(advisory_accel_set(VAdvisory.DNC, 5.0)) == 3


class TestTransitions:
    def test_compliance_gives_three_branches(self):
        br = vert_branches(VState(0, 30, 0, 5), VAdvisory.CL1500)
        assert [p for _, p in br] == [0.25, 0.5, 0.25]
        assert sorted(b.hdot_int for b, _ in br) == pytest.approx([-G / 8, 0, G / 8])

    def test_general_case_nine_branches(self):
        br = vert_branches(VState(0, 0, 0, 5), VAdvisory.COC)
        assert len(br) == 9
        assert sorted(p for _, p in br) == sorted(a * b for a in (.25, .5, .25) for b in (.25, .5, .25))

    def test_mass_conserved_random_states(self, small_grid):
        rng = np.random.default_rng(0)
        g = small_grid.grid
        for _ in range(1000):
            p = g.point(int(rng.integers(g.size)))
            s = VState(p[2], p[3], p[4], int(p[0]), int(p[1]))
            tr = vert_transitions(s, int(rng.integers(9)), small_grid)
            assert sum(w for _, w in tr) == pytest.approx(1.0, abs=1e-9)

    def test_snapping_stays_adjacent(self, small_grid):
        s = VState(100, 0, 0, 2)
        for a in VAdvisory:
            for nxt, p in vert_transitions(s, a, small_grid):
                branches = vert_branches(s, a)
                lo = min(b.h for b, _ in branches)
                hi = max(b.h for b, _ in branches)
                below = small_grid.h[small_grid.h <= lo]
                above = small_grid.h[small_grid.h >= hi]
                assert (below[-1] if below.size else small_grid.h[0]) <= nxt.h
                assert nxt.h <= (above[0] if above.size else small_grid.h[-1])


class TestReward:
    def test_nmac_dominant(self):
        for a in VAdvisory:
            r = vert_reward(VState(0, 0, 0, 0), a)
            assert r <= -1.0

    def test_quiet_is_free(self):
        assert vert_reward(VState(5000, 0, 0, 30), VAdvisory.COC) == 0.0

    def test_reversal(self):
        c = Costs()
        r = vert_reward(VState(-5000, 0, 0, 30, VAdvisory.DES1500), VAdvisory.CL1500)
        assert r == pytest.approx(c.alert + c.reversal)

    def test_crossing(self):
        c = Costs()
        r = vert_reward(VState(500, 0, 0, 30), VAdvisory.CL1500)
        assert r == pytest.approx(c.alert + c.crossing)

    def test_strengthen_and_weaken(self):
        c = Costs()
        assert vert_reward(VState(-5000, 0, 0, 9, VAdvisory.CL1500), VAdvisory.SCL2500) == \
            pytest.approx(c.alert + c.strengthen)
        assert vert_reward(VState(-5000, 0, 0, 9, VAdvisory.SCL2500), VAdvisory.DND) == \
            pytest.approx(c.alert + c.weaken)

    def test_vectorized_matches_scalar(self, small_grid):
        R = vcas_rewards(small_grid)
        g = small_grid.grid
        for flat in range(0, g.size, 7):
            p = g.point(flat)
            s = VState(p[2], p[3], p[4], int(p[0]), int(p[1]))
            for a in VAdvisory:
                assert R[flat, a] == pytest.approx(vert_reward(s, a), abs=1e-15)
        assert R.max() <= 0.0


class TestBuild:
    def test_rows_match_reference(self, small_grid, small_mdp):
        small_mdp.validate()
        g = small_grid.grid
        rng = np.random.default_rng(1)
        for _ in range(300):
            flat = int(rng.integers(g.size))
            a = int(rng.integers(9))
            p = g.point(flat)
            s = VState(p[2], p[3], p[4], int(p[0]), int(p[1]))
            ref = [(state_index(small_grid, n), w) for n, w in vert_transitions(s, a, small_grid)]
            got = small_mdp.transitions(flat, a)
            assert [i for i, _ in ref] == [i for i, _ in got]
            np.testing.assert_allclose([w for _, w in ref], [w for _, w in got], atol=1e-12)

    def test_counts(self):
        assert VGrid(np.linspace(-8000, 8000, 17), np.linspace(-100, 100, 11),
                     np.linspace(-100, 100, 11), np.arange(21)).num_states == 388_773
        assert VGrid.paper().num_states == 65 * 39 * 39 * 41 * 9

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            build_vcas_mdp(VGrid.paper(), memory_budget=3e9)

    def test_terminal_discount_only_on_tau_zero(self, small_grid, small_mdp):
        d = small_mdp.state_discounts()
        n0 = small_grid.num_states // small_grid.tau.size
        assert np.all(d[:n0] == 0.95) and np.all(d[n0:] == 1.0)

    def test_grid_bounds_enforced(self):
        with pytest.raises(ContractError):
            VGrid(np.array([-9000.0, 0]), np.array([0.0]), np.array([0.0]), np.arange(3))
        with pytest.raises(ContractError):
            VGrid(np.array([0.0, 1]), np.array([0.0]), np.array([0.0]), np.array([0, 2]))
