import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachcas.mdp import (
    ContractError, Grid, Mdp, QTable, bellman_backup, load_qtable, multilinear_lookup,
    policy, save_qtable, solve,
)


def random_dense_mdp(rng, n_s, n_a, gamma):
    """Dense random MDP: T[s, a, s'] with a few nonzero successors per row."""
    T = np.zeros((n_s, n_a, n_s))
    for s in range(n_s):
        for a in range(n_a):
            k = rng.integers(1, min(n_s, 4) + 1)
            succ = rng.choice(n_s, size=k, replace=False)
            p = rng.random(k) + 0.1
            T[s, a, succ] = p / p.sum()
    R = rng.normal(size=(n_s, n_a))
    return T, R, gamma


def to_mdp(T, R, gamma):
    n_s, n_a, _ = T.shape
    lists = [[[(int(j), float(T[s, a, j])) for j in np.flatnonzero(T[s, a])] for a in range(n_a)]
             for s in range(n_s)]
    return Mdp.from_lists(lists, R, gamma)


def synchronous_vi(T, R, gamma, tol=1e-13, max_iter=100000):
    """Textbook value iteration: every backup reads the previous iterate."""
    Q = np.zeros_like(R)
    for _ in range(max_iter):
        new = R + gamma * T @ Q.max(axis=1)
        if np.abs(new - Q).max() < tol:
            return new
        Q = new
    return Q


def test_zero_fixed_point():
    T, _, g = random_dense_mdp(np.random.default_rng(0), 5, 2, 0.9)
    mdp = to_mdp(T, np.zeros((5, 2)), g)
    q = QTable(np.zeros((5, 2)))
    assert bellman_backup(q, mdp, 3, 1) == 0.0


def test_single_state_geometric_series():
    mdp = Mdp.from_lists([[[(0, 1.0)]]], [[1.0]], 0.9)
    q = solve(mdp, tol=1e-9, max_sweeps=10000)
    assert q.converged
    assert q.values[0, 0] == pytest.approx(10.0, abs=1e-8)


def test_zero_discount_is_reward_after_one_sweep():
    rng = np.random.default_rng(1)
    T, R, _ = random_dense_mdp(rng, 6, 3, 0.0)
    q = solve(to_mdp(T, R, 0.0), tol=1e-12, max_sweeps=1)
    np.testing.assert_array_equal(q.values, R)


@pytest.mark.parametrize("seed", range(5))
def test_gauss_seidel_matches_synchronous_oracle(seed):
    rng = np.random.default_rng(seed)
    T, R, g = random_dense_mdp(rng, 3, 2, 0.8)
    q = solve(to_mdp(T, R, g), tol=1e-12, max_sweeps=100000)
    np.testing.assert_allclose(q.values, synchronous_vi(T, R, g), atol=1e-9)


def test_backup_reads_current_table():
    # Two states in a chain: updating state 1 must see the fresh value of state 0.
    mdp = Mdp.from_lists([[[(0, 1.0)]], [[(0, 1.0)]]], [[1.0], [0.0]], 0.5)
    q = QTable(np.zeros((2, 1)))
    q.values[0, 0] = bellman_backup(q, mdp, 0, 0)
    assert bellman_backup(q, mdp, 1, 0) == pytest.approx(0.5)


def test_backup_index_errors():
    mdp = Mdp.from_lists([[[(0, 1.0)]]], [[1.0]], 0.9)
    with pytest.raises(ContractError):
        bellman_backup(QTable(np.zeros((1, 1))), mdp, 1, 0)
    with pytest.raises(ContractError):
        bellman_backup(QTable(np.zeros((1, 1))), mdp, 0, 3)


def test_nonconvergence_is_flagged_not_raised():
    mdp = Mdp.from_lists([[[(0, 1.0)]]], [[1.0]], 0.99)
    q = solve(mdp, tol=1e-9, max_sweeps=3)
    assert not q.converged
    assert len(q.residuals) == 3


def test_validate_rejects_bad_rows():
    with pytest.raises(ContractError):
        Mdp.from_lists([[[(0, 0.7)]]], [[0.0]]).validate()
    with pytest.raises(ContractError):
        Mdp.from_lists([[[(4, 1.0)]]], [[0.0]]).validate()


@pytest.mark.parametrize("scores, best", [([1, 3, 2], 1), ([5, 5, 1], 0)])
def test_policy_argmax_and_ties(scores, best):
    assert policy(QTable(np.array([scores], dtype=float)), 0) == best


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=9), st.floats(-1e6, 1e6))
def test_policy_is_argmax_and_shift_invariant(scores, shift):
    q = QTable(np.array([scores]))
    a = policy(q, 0)
    assert all(q.values[0, a] >= v for v in q.values[0])
    shifted = QTable(q.values + shift)
    # A shift can merge nearly-equal scores through rounding; only exact-arithmetic shifts are compared.
    if np.all((q.values + shift) - shift == q.values) and len(set((q.values + shift)[0])) == len(set(scores)):
        assert policy(shifted, 0) == a


@pytest.mark.parametrize("seed", range(5))
def test_synchronous_residuals_contract(seed):
    rng = np.random.default_rng(100 + seed)
    n_s = int(rng.integers(5, 100))
    T, R, g = random_dense_mdp(rng, n_s, 3, 0.9)
    tol = 1e-6
    Q = np.zeros_like(R)
    prev = None
    for _ in range(50):
        new = R + g * T @ Q.max(axis=1)
        r = np.abs(new - Q).max()
        if prev is not None:
            assert r <= g * prev + 10 * tol
        prev, Q = r, new


def test_gauss_seidel_residuals_monotone():
    rng = np.random.default_rng(7)
    T, R, g = random_dense_mdp(rng, 60, 4, 0.9)
    q = solve(to_mdp(T, R, g), tol=1e-8, max_sweeps=1000)
    r = np.array(q.residuals)
    assert np.all(r[1:] <= r[:-1] + 1e-12)


class TestLookup:
    def test_on_grid_point(self):
        grid = Grid([[0.0, 1.0, 3.0], [10.0, 20.0]])
        q = QTable(np.arange(12.0).reshape(6, 2), grid)
        for flat in range(6):
            np.testing.assert_array_equal(multilinear_lookup(q, grid.point(flat)), q.values[flat])
            np.testing.assert_array_equal(multilinear_lookup(q, grid.point(flat), "linear"), q.values[flat])

    def test_linear_midpoint(self):
        q = QTable(np.array([[0.0], [10.0]]), Grid([[0.0, 10.0]]))
        assert multilinear_lookup(q, [5.0], "linear")[0] == pytest.approx(5.0)

    def test_clamps_outside(self):
        q = QTable(np.array([[0.0], [10.0]]), Grid([[0.0, 10.0]]))
        assert multilinear_lookup(q, [-50.0], "linear")[0] == 0.0
        assert multilinear_lookup(q, [50.0])[0] == 10.0

    def test_weights_sum_to_one(self):
        grid = Grid([[0, 1, 2, 5], [-1, 1], [0, 4, 8]])
        rng = np.random.default_rng(3)
        for _ in range(100):
            st_ = grid.interp(rng.uniform(-2, 9, size=3), "linear")
            assert sum(w for _, w in st_) == pytest.approx(1.0, abs=1e-12)


def test_grid_rejects_unsorted_cuts():
    with pytest.raises(ContractError):
        Grid([[0.0, 0.0, 1.0]])


def test_qtable_roundtrip(tmp_path):
    grid = Grid([[0.0, 1.5, 4.0], [-2.0, 2.0]], ["a", "b"])
    rng = np.random.default_rng(0)
    q = QTable(rng.normal(size=(6, 3)).astype(np.float32).astype(np.float64), grid)
    p1, p2 = tmp_path / "a.qtbl", tmp_path / "b.qtbl"
    save_qtable(q, p1, {"seed": 3})
    loaded = load_qtable(p1)
    np.testing.assert_array_equal(loaded.values, q.values)
    assert loaded.grid.names == ["a", "b"]
    assert loaded.meta["seed"] == 3
    save_qtable(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    head = p1.read_bytes()[:4]
    assert head == b"QTBL"


def test_qtable_truncated(tmp_path):
    grid = Grid([[0.0, 1.0]])
    p = tmp_path / "t.qtbl"
    save_qtable(QTable(np.ones((2, 2)), grid), p)
    p.write_bytes(p.read_bytes()[:30])
    with pytest.raises(ContractError):
        load_qtable(p)
