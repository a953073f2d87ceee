import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachcas.costs import Costs
from reachcas.mdp import QTable, solve
from reachcas.hcas import (
    HAdvisory, HGrid, HState, build_hcas_mdp, collision_course, hcas_rewards, hor_branches,
    hor_positions, hor_reward, hor_step, hor_transitions, network_tau, state_index, to_cartesian,
    to_cartesian_training_set, to_polar, turn_set, wrap,
)

angles = st.floats(-math.pi, math.pi)
turns = st.floats(-0.07, 0.07)


@pytest.fixture(scope="module")
def small_grid():
    ang = np.linspace(-np.pi, np.pi, 9)
    return HGrid(np.array([0, 400, 1000, 3000, 8000, 20000.0]), ang, ang, np.arange(4))


class TestPositions:
    def test_straight_head_on(self):
        own, intr = hor_positions(HState(0, 0, math.pi, 3), 0.0, 0.0)
        assert own == (200.0, 0.0)
        assert intr == pytest.approx((-185.0, 0.0), abs=1e-12)

    def test_quarter_turn(self):
        own, _ = hor_positions(HState(0, 0, 0, 3), math.pi / 2, 0.0)
        assert own == pytest.approx((127.32395447, 127.32395447), abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(angles, st.floats(-3, 3), st.floats(-3, 3))
    def test_chord_shorter_than_arc(self, psi, uo, ui):
        own, intr = hor_positions(HState(0, 0, psi, 3), uo, ui)
        assert math.hypot(*own) <= 200.0 + 1e-9
        assert math.hypot(*intr) <= 185.0 + 1e-9

    @pytest.mark.parametrize("u", [1e-7, -3e-7, 5e-7])
    def test_series_branch_continuous(self, u):
        s = HState(1000, 0.3, 1.1, 3)
        small = hor_positions(s, u, u)
        big = hor_positions(s, 2e-6 * np.sign(u), 2e-6 * np.sign(u))
        np.testing.assert_allclose(np.ravel(small), np.ravel(big), atol=1e-3)


class TestStep:
    def test_head_on(self):
        n = hor_step(HState(10000, 0, math.pi, 5), 0, 0, 0)
        assert n.rho == pytest.approx(9615.0)
        assert n.theta == pytest.approx(0.0, abs=1e-12)
        assert n.psi == pytest.approx(math.pi)
        assert n.tau == 4

    def test_same_turn_keeps_relative_heading(self):
        assert hor_step(HState(5000, 1.0, 0.4, 5), 0.03, 0.03, 0).psi == pytest.approx(0.4, abs=1e-15)

    def test_tau_floor(self):
        assert hor_step(HState(5000, 0, 0, 0), 0, 0, 0).tau == 0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 50000), angles, angles)
    def test_law_of_cosines(self, rho, theta, psi):
        n = hor_step(HState(rho, theta, psi, 3), 0.0, 0.0, 0)
        rx, ry = rho * math.cos(theta), rho * math.sin(theta)
        vx, vy = 185 * math.cos(psi) - 200, 185 * math.sin(psi)
        closed = (rx + vx) ** 2 + (ry + vy) ** 2
        assert n.rho ** 2 == pytest.approx(closed, rel=1e-9, abs=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 50000), angles, angles, turns, turns)
    def test_angles_wrapped(self, rho, theta, psi, uo, ui):
        n = hor_step(HState(rho, theta, psi, 3), uo, ui, 0)
        assert -math.pi < n.theta <= math.pi
        assert -math.pi < n.psi <= math.pi

    @settings(max_examples=100, deadline=None)
    @given(st.floats(100, 50000), angles, angles, angles, turns)
    def test_rotation_consistent_without_ownship_motion(self, rho, theta, psi, alpha, ui):
        # Rotating the intruder's position and heading together only rotates
        # the picture when the ownship itself does not move.
        a = hor_step(HState(rho, theta, psi, 3, v_own=0.0), 0.0, ui, 0)
        b = hor_step(HState(rho, theta + alpha, psi + alpha, 3, v_own=0.0), 0.0, ui, 0)
        assert b.rho == pytest.approx(a.rho, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(100, 50000), angles, angles, turns, turns)
    def test_mirror_symmetry(self, rho, theta, psi, uo, ui):
        a = hor_step(HState(rho, theta, psi, 3), uo, ui, 0)
        b = hor_step(HState(rho, -theta, -psi, 3), -uo, -ui, 0)
        assert b.rho == pytest.approx(a.rho, rel=1e-9, abs=1e-9)
        assert wrap(a.theta + b.theta) == pytest.approx(0.0, abs=1e-7)


class TestCartesian:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(1, 5e4), st.floats(-3.1, 3.1), angles)
    def test_round_trip(self, rho, theta, psi):
        r2, t2, p2 = to_polar(*to_cartesian(rho, theta, psi))
        assert r2 == pytest.approx(rho, rel=1e-9)
        assert t2 == pytest.approx(theta, abs=1e-9)

    def test_training_set(self, small_grid):
        vals = np.arange(small_grid.num_states * 5, dtype=float).reshape(-1, 5)
        q = QTable(vals, small_grid.grid)
        x, y = to_cartesian_training_set(q, 2, 3)
        n = small_grid.slice_size
        assert x.shape == (n, 3) and y.shape == (n, 5)
        start = (2 * 5 + 3) * n
        np.testing.assert_array_equal(y, vals[start:start + n])
        theta0 = np.isclose(np.arctan2(x[:, 1], x[:, 0]), 0.0) & (x[:, 0] > 0)
        assert np.all(x[theta0, 1] == 0)
        # tau past the table's range rounds down to the last slice
        _, y_hi = to_cartesian_training_set(q, 60, 3)
        np.testing.assert_array_equal(y_hi, vals[(3 * 5 + 3) * n:(3 * 5 + 4) * n])

    def test_paper_slice_size(self):
        assert HGrid.paper().slice_size == 32 * 41 * 41


@pytest.mark.parametrize("tau, expected", [(0, 0), (4, 0), (5, 5), (29, 20), (61, 60), (80, 60)])
def test_network_tau_rounds_down(tau, expected):
    assert network_tau(tau) == expected


class TestTransitions:
    def test_nine_branches(self):
        br = hor_branches(HState(5000, 0.2, 1.0, 4), HAdvisory.SL)
        assert len(br) == 9
        assert sum(p for _, p in br) == pytest.approx(1.0)

    def test_coc_mid_rate_zero(self):
        assert turn_set(HAdvisory.COC)[1] == 0.0
        np.testing.assert_allclose(np.degrees(turn_set(HAdvisory.SR)), [-4, -3, -2])

    def test_mass_conserved(self, small_grid):
        rng = np.random.default_rng(0)
        g = small_grid.grid
        for _ in range(300):
            p = g.point(int(rng.integers(g.size)))
            s = HState(p[2], p[3], p[4], int(p[0]), int(p[1]))
            tr = hor_transitions(s, int(rng.integers(5)), small_grid)
            assert sum(w for _, w in tr) == pytest.approx(1.0, abs=1e-9)

    def test_builder_matches_reference(self, small_grid):
        mdp = build_hcas_mdp(small_grid)
        mdp.validate()
        g = small_grid.grid
        n = small_grid.theta.size - 1

        def merged(pairs):
            # theta/psi = -pi and +pi are the same physical angle
            d = defaultdict(float)
            for i, w in pairs:
                t, s, r, th, ps = g.unravel(i)
                d[(t, s, r, th % n, ps % n)] += w
            return d

        rng = np.random.default_rng(1)
        for _ in range(300):
            flat, a = int(rng.integers(g.size)), int(rng.integers(5))
            p = g.point(flat)
            s = HState(p[2], p[3], p[4], int(p[0]), int(p[1]))
            ref = merged((state_index(small_grid, x), w) for x, w in hor_transitions(s, a, small_grid))
            got = merged(mdp.transitions(flat, a))
            assert ref.keys() == got.keys()
            for k in ref:
                assert got[k] == pytest.approx(ref[k], abs=1e-12)

    def test_solve_small(self, small_grid):
        q = solve(build_hcas_mdp(small_grid), tol=1e-6, max_sweeps=5000)
        assert q.converged


class TestReward:
    def test_far_coc_free(self):
        assert hor_reward(HState(40000, 2.0, 0.0, 60), HAdvisory.COC) == 0.0

    def test_nmac(self):
        assert hor_reward(HState(0, 0, 0, 0), HAdvisory.COC) <= -1.0

    def test_reversal(self):
        c = Costs()
        r = hor_reward(HState(40000, 2.0, 0.0, 60, HAdvisory.SR), HAdvisory.SL)
        assert r == pytest.approx(c.alert + c.reversal)

    def test_coc_after_alert_on_collision_course(self):
        c = Costs()
        s = HState(8000, 0.0, math.pi, 30, HAdvisory.WL)
        assert collision_course(s.rho, s.theta, s.psi, s.tau)
        assert hor_reward(s, HAdvisory.COC) == pytest.approx(c.coc_conflict)
        assert hor_reward(HState(8000, 0.0, math.pi, 30), HAdvisory.COC) == 0.0

    def test_diverging_is_not_collision_course(self):
        assert not collision_course(3000, math.pi, 0.0, 30)

    def test_vectorized_matches_scalar(self, small_grid):
        R = hcas_rewards(small_grid)
        g = small_grid.grid
        for flat in range(0, g.size, 5):
            p = g.point(flat)
            s = HState(p[2], p[3], p[4], int(p[0]), int(p[1]))
            for a in HAdvisory:
                assert R[flat, a] == pytest.approx(hor_reward(s, a), abs=1e-15)


def test_paper_count():
    assert HGrid.paper().num_states == 32 * 41 * 41 * 81 * 5
