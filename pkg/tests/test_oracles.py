import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mgfpp.game import InducedMdp, MarkovGame, induce_mdp
from mgfpp.generators import GenParams, generate
from mgfpp.oracles import (best_response_gaps, exploitability, exploitability_per_state,
                           mdp_value_iteration, policy_evaluation, shapley_value_iteration,
                           solve_matrix_zero_sum, stage_equilibria)

from conftest import single_state


def test_matrix_pennies():
    x, y, v = solve_matrix_zero_sum([[1, -1], [-1, 1]])
    assert abs(v) < 1e-12
    assert np.allclose(x, 0.5) and np.allclose(y, 0.5)


def test_matrix_dominance():
    x, y, v = solve_matrix_zero_sum([[1, 0], [2, 1]])
    assert np.isclose(v, 1.0)
    assert np.allclose(x, [0, 1]) and np.allclose(y, [0, 1])


def test_matrix_rectangular_and_degenerate():
    x, y, v = solve_matrix_zero_sum(np.full((3, 2), 4.0))
    assert np.isclose(v, 4.0)
    x, y, v = solve_matrix_zero_sum([[3.0, -1.0, 2.0]])
    assert np.isclose(v, -1.0) and np.allclose(y, [0, 1, 0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_matrix_duality(M):
    x, y, v = solve_matrix_zero_sum(M)
    scale = max(1.0, np.abs(M).max())
    assert np.all(x @ M >= v - 1e-9 * scale)
    assert np.all(M @ y <= v + 1e-9 * scale)
    assert abs(x @ M @ y - v) <= 1e-9 * scale
    assert np.isclose(x.sum(), 1) and np.isclose(y.sum(), 1)


def test_mdp_examples():
    one = InducedMdp(np.ones((1, 1)), np.ones((1, 1, 1)), 0.5)
    assert np.isclose(mdp_value_iteration(one).values[0], 2.0, atol=1e-9)
    zero = InducedMdp(np.zeros((2, 2)), np.full((2, 2, 2), 0.5), 0.9)
    sol = mdp_value_iteration(zero)
    assert np.all(sol.values == 0) and np.all(sol.q == 0)
    chain = np.zeros((2, 1, 2))
    chain[:, 0, 1] = 1.0
    sol = mdp_value_iteration(InducedMdp(np.array([[0.0], [1.0]]), chain, 0.9), tol=1e-10)
    assert np.allclose(sol.values, [9.0, 10.0], atol=1e-9)


def test_mdp_gamma_zero_and_policy_ties():
    m = InducedMdp(np.array([[1.0, 3.0, 3.0]]), np.ones((1, 3, 1)), 0.0)
    sol = mdp_value_iteration(m)
    assert sol.values[0] == 3.0 and sol.policy[0] == 1


def test_policy_evaluation_closed_forms(pennies):
    rng = np.random.default_rng(0)
    prof = [rng.dirichlet([1, 1], size=1) for _ in range(2)]
    u = policy_evaluation(pennies, prof)
    expected = prof[0][0] @ pennies.rewards[0, 0] @ prof[1][0] / (1 - pennies.gamma)
    assert np.allclose(u[0], expected) and np.allclose(u[1], -expected)

    g = generate("identical", GenParams(seed=3))
    const = MarkovGame(np.full_like(g.rewards, 2.5), g.transitions, g.gamma, controller=0)
    prof = [np.full((3, 2), 0.5)] * 2
    assert np.allclose(policy_evaluation(const, prof), 2.5 / (1 - g.gamma))


def _evaluate_inside_induced(g, player, profile):
    """Independent path: freeze the others, then apply pi^i inside the induced MDP."""
    others = [None if j == player else p for j, p in enumerate(profile)]
    m = induce_mdp(g, player, others)
    pi = profile[player]
    r = (m.rewards * pi).sum(1)
    P = np.einsum("sa,sat->st", pi, m.transitions)
    # Neumann series, long enough to reach machine precision
    v = np.zeros(m.n_states)
    for _ in range(int(np.ceil(np.log(1e-17) / np.log(max(m.gamma, 1e-3)))) + 5):
        v = r + m.gamma * P @ v
    return v


@pytest.mark.parametrize("kind,seed", [("identical", 0), ("zero_sum", 1), ("corollary", 2)])
def test_policy_evaluation_vs_induced_path(kind, seed):
    n = 2 if kind == "zero_sum" else 3
    g = generate(kind, GenParams(n_players=n, n_states=4, actions=3, seed=seed))
    rng = np.random.default_rng(seed)
    prof = [rng.dirichlet(np.ones(3), size=4) for _ in range(n)]
    u = policy_evaluation(g, prof)
    for i in range(n):
        assert np.max(np.abs(u[i] - _evaluate_inside_induced(g, i, prof))) <= 1e-9


def test_exploitability_examples(pennies, coordination):
    uni = [np.array([[0.5, 0.5]])] * 2
    assert abs(exploitability(pennies, uni)) <= 1e-9
    top = [np.array([[1.0, 0.0]])] * 2
    low = [np.array([[0.0, 1.0]])] * 2
    assert abs(exploitability(coordination, top)) <= 1e-9
    assert abs(exploitability(coordination, low)) <= 1e-9
    mixed = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
    assert exploitability(coordination, mixed) > 0.5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_exploitability_nonnegative(seed):
    g = generate("corollary", GenParams(n_players=3, seed=seed))
    rng = np.random.default_rng(seed)
    prof = [rng.dirichlet(np.ones(2), size=3) for _ in range(3)]
    assert exploitability(g, prof) >= -1e-9
    assert best_response_gaps(g, prof).min() >= -1e-9
    assert exploitability_per_state(g, prof) >= exploitability(g, prof) - 1e-12


def test_shapley_single_state_pennies(pennies):
    res = shapley_value_iteration(pennies, tol=1e-10)
    assert np.allclose(res.q_star[0], pennies.rewards[0], atol=1e-9)
    assert np.allclose(res.values, 0, atol=1e-9)


def test_shapley_single_state_closed_form():
    m = np.array([[1, 0], [2, 1]], dtype=float)
    g = single_state(m, -m, gamma=0.5)
    res = shapley_value_iteration(g, tol=1e-10)
    assert np.allclose(res.q_star[0], m + 0.5 * 1.0 / (1 - 0.5), atol=1e-9)


def test_shapley_gamma_zero():
    g = generate("zero_sum", GenParams(seed=5, gamma=0.0, actions=3))
    res = shapley_value_iteration(g, tol=1e-10)
    assert np.array_equal(res.q_star[0], g.rewards[0])
    for s in range(3):
        _, _, v = solve_matrix_zero_sum(g.rewards[0, s])
        assert np.isclose(res.values[0, s], v, atol=1e-12)


def test_shapley_matches_matrix_solver_on_one_state():
    g = generate("zero_sum", GenParams(seed=8, n_states=1))
    res = shapley_value_iteration(g, tol=1e-12)
    _, _, v = solve_matrix_zero_sum(g.rewards[0, 0])
    assert abs(res.values[0, 0] - v / (1 - g.gamma)) <= 1e-9


def test_shapley_two_state_exploitability():
    g = generate("zero_sum", GenParams(seed=4, n_states=2))
    res = shapley_value_iteration(g, tol=1e-8)
    assert res.exploitability_per_state < 1e-6
    assert res.residual <= 1e-8


def test_shapley_rejects_wrong_class():
    with pytest.raises(ValueError):
        shapley_value_iteration(generate("identical", GenParams(seed=0)))


def _brute_pure_nash(table):
    shape = table.shape
    out = []
    for a in itertools.product(*(range(m) for m in shape)):
        ok = True
        for j, m in enumerate(shape):
            for alt in range(m):
                b = list(a)
                b[j] = alt
                if table[tuple(b)] > table[a] + 1e-12:
                    ok = False
        if ok:
            out.append(a)
    return out


def test_stage_equilibria_examples():
    eq = stage_equilibria(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert sorted(eq.pure_nash) == [(0, 0), (1, 1)]
    assert eq.global_maxima == [(0, 0)]
    eq = stage_equilibria(np.zeros((2, 3)))
    assert len(eq.pure_nash) == 6


def test_stage_equilibria_random_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(50):
        t = rng.normal(size=(2, 2, 2))
        assert sorted(stage_equilibria(t).pure_nash) == sorted(_brute_pure_nash(t))
