"""Ground-truth solvers that do not touch the learning code path.

Everything here is exact up to floating point: stage matrix games go through a
dense simplex with Bland's rule, MDPs through value iteration with the usual
contraction stopping bound, and profile values through a direct linear solve.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .game import InducedMdp, MarkovGame, classify, induce_mdp

PIVOT_EPS = 1e-12


class LPError(RuntimeError):
    """The stage LP failed to reach a verified optimum."""


# --- matrix games ----------------------------------------------------------

def _simplex_max(A: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Maximize ``c @ y`` subject to ``A @ y <= b``, ``y >= 0`` with ``b > 0``.

    Returns the primal solution and the dual prices of the constraints.  The
    slack basis is feasible, so no phase one is needed.
    """
    m, n = A.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))

    for _ in range(50 * (m + n) + 50):
        entering = next((j for j in range(n + m) if T[m, j] < -PIVOT_EPS), None)
        if entering is None:
            break
        col = T[:m, entering]
        rows = [i for i in range(m) if col[i] > PIVOT_EPS]
        if not rows:
            raise LPError("stage LP is unbounded; payoff matrix is badly conditioned")
        ratios = [T[i, -1] / col[i] for i in rows]
        best = min(ratios)
        # Bland: among tied rows leave with the lowest basic variable index
        leaving = min((i for i, r in zip(rows, ratios) if r <= best + PIVOT_EPS * max(1.0, abs(best))),
                      key=lambda i: basis[i])
        T[leaving] /= T[leaving, entering]
        for i in range(m + 1):
            if i != leaving and T[i, entering] != 0.0:
                T[i] -= T[i, entering] * T[leaving]
        basis[leaving] = entering
    else:
        raise LPError("simplex did not terminate within the pivot limit")

    y = np.zeros(n + m)
    for i, var in enumerate(basis):
        y[var] = T[i, -1]
    dual = T[m, n:n + m].copy()
    return y[:n], dual


def solve_matrix_zero_sum(M) -> tuple[np.ndarray, np.ndarray, float]:
    """Solve the zero-sum matrix game where the row player maximizes ``x @ M @ y``.

    Returns ``(x, y, value)``.  The answer is checked against both players'
    pure deviations before it is returned; a failed check raises
    :class:`LPError`.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("payoff matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff matrix has non-finite entries")
    shift = 1.0 - M.min()
    Mp = M + shift
    m, n = M.shape
    y_raw, x_raw = _simplex_max(Mp, np.ones(m), np.ones(n))
    total = y_raw.sum()
    if not total > 0:
        raise LPError("degenerate stage LP solution")
    x_raw = np.clip(x_raw, 0.0, None)
    x = x_raw / x_raw.sum()
    y = np.clip(y_raw, 0.0, None)
    y = y / y.sum()
    value = float(x @ M @ y)

    scale = max(1.0, float(np.abs(M).max()))
    if (x @ M).min() < value - 1e-9 * scale or (M @ y).max() > value + 1e-9 * scale:
        cond = np.linalg.cond(Mp) if m == n else float("nan")
        raise LPError(
            f"stage LP optimality check failed (condition number {cond:.3g}); "
            f"row guarantee {(x @ M).min():.12g}, column guarantee {(M @ y).max():.12g}")
    return x, y, value


# --- MDPs ------------------------------------------------------------------

class MdpSolution(NamedTuple):
    values: np.ndarray
    q: np.ndarray
    policy: np.ndarray


def _stop_threshold(tol: float, gamma: float) -> float:
    if gamma == 0.0:
        return float("inf")
    return tol * (1.0 - gamma) / (2.0 * gamma)


def mdp_value_iteration(m: InducedMdp, tol: float = 1e-10,
                        max_iterations: int = 1_000_000) -> MdpSolution:
    """Bellman iteration until successive iterates differ by at most
    ``tol * (1 - gamma) / (2 * gamma)``, which puts the values within ``tol / 2``
    of the fixed point.  The greedy policy breaks ties toward the lowest index.
    """
    v = np.zeros(m.n_states)
    stop = _stop_threshold(tol, m.gamma)
    for _ in range(max_iterations):
        q = m.rewards + m.gamma * (m.transitions @ v)
        new = q.max(axis=1)
        done = np.max(np.abs(new - v)) <= stop
        v = new
        if done:
            break
    else:
        raise RuntimeError("value iteration did not reach the requested tolerance")
    q = m.rewards + m.gamma * (m.transitions @ v)
    return MdpSolution(v, q, q.argmax(axis=1))


# --- profiles --------------------------------------------------------------

def _joint_distribution(g: MarkovGame, profile: Sequence[np.ndarray]) -> np.ndarray:
    """``prod_j pi^j(s)(a^j)`` as an ``(S, A^1, ..., A^n)`` array."""
    n = g.n_players
    joint = np.ones((g.n_states,) + (1,) * n)
    for j, pi in enumerate(profile):
        shape = [g.n_states] + [1] * n
        shape[1 + j] = g.action_counts[j]
        joint = joint * np.asarray(pi, dtype=float).reshape(shape)
    return joint


def check_profile(g: MarkovGame, profile, tol: float = 1e-12) -> None:
    if len(profile) != g.n_players:
        raise ValueError(f"profile needs {g.n_players} strategies")
    for j, pi in enumerate(profile):
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (g.n_states, g.action_counts[j]):
            raise ValueError(f"strategy {j} has shape {pi.shape}")
        if np.any(pi < -tol) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > tol:
            raise ValueError(f"strategy {j} is not a distribution at every state")


def policy_evaluation(g: MarkovGame, profile: Sequence[np.ndarray]) -> np.ndarray:
    """Discounted values ``u^i(s; pi)`` of every player, shape ``(n, S)``.

    Solves ``(I - gamma P_pi) u = r_pi`` directly.
    """
    S = g.n_states
    joint = _joint_distribution(g, profile).reshape(S, -1)
    r = (g.rewards.reshape(g.n_players, S, -1) * joint).sum(axis=2)  # (n, S)
    P = (g.transitions.reshape(S, -1, S) * joint[:, :, None]).sum(axis=1)
    A = np.eye(S) - g.gamma * P
    u = np.linalg.solve(A, r.T).T
    resid = np.max(np.abs(u @ A.T - r))
    if resid > 1e-9:
        raise RuntimeError(f"policy evaluation residual {resid:.3g} exceeds 1e-9")
    return u


def best_response_gaps(g: MarkovGame, profile: Sequence[np.ndarray],
                       tol: float = 1e-12) -> np.ndarray:
    """``V_BR^i(s) - u^i(s; pi)`` for every player and state, shape ``(n, S)``."""
    u = policy_evaluation(g, profile)
    gaps = np.empty_like(u)
    for i in range(g.n_players):
        br = mdp_value_iteration(induce_mdp(g, i, profile), tol=tol)
        gaps[i] = br.values - u[i]
    return gaps


def exploitability(g: MarkovGame, profile: Sequence[np.ndarray]) -> float:
    """Largest gain any player gets from a unilateral best response, averaged
    over the game's initial state distribution."""
    gaps = best_response_gaps(g, profile)
    return float(np.max(gaps @ g.initial))


def exploitability_per_state(g: MarkovGame, profile: Sequence[np.ndarray]) -> float:
    """Worst best-response gain over players and starting states."""
    return float(np.max(best_response_gaps(g, profile)))


# --- two-player zero-sum Markov games --------------------------------------

@dataclass
class SolveResult:
    q_star: list[np.ndarray]
    values: np.ndarray
    profile: list[np.ndarray]
    exploitability: float
    exploitability_per_state: float
    iterations_used: int
    residual: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "q_star": [q.tolist() for q in self.q_star],
            "values": np.asarray(self.values).tolist(),
            "profile": [np.asarray(p).tolist() for p in self.profile],
            "exploitability": self.exploitability,
            "exploitability_per_state": self.exploitability_per_state,
            "iterations_used": self.iterations_used,
            "residual": self.residual,
            **self.extra,
        }


def _stage_matrices(g: MarkovGame, v: np.ndarray) -> np.ndarray:
    return g.rewards[0] + g.gamma * (g.transitions @ v)


def _shapley_operator(g: MarkovGame, v: np.ndarray):
    stage = _stage_matrices(g, v)
    new = np.empty(g.n_states)
    xs, ys = [], []
    for s in range(g.n_states):
        x, y, val = solve_matrix_zero_sum(stage[s])
        new[s] = val
        xs.append(x)
        ys.append(y)
    return new, np.array(xs), np.array(ys)


def shapley_value_iteration(g: MarkovGame, tol: float = 1e-8,
                            max_iterations: int = 100_000) -> SolveResult:
    """Equilibrium of a two-player zero-sum Markov game by Shapley iteration.

    Stops once successive iterates differ by at most
    ``tol * (1 - gamma) / (2 * gamma)``.  ``residual`` is
    ``||T v - v||_inf`` at the returned values.
    """
    cls = classify(g)
    if g.n_players != 2 or not cls.zero_sum:
        raise ValueError("Shapley iteration needs a two-player zero-sum game")
    v = np.zeros(g.n_states)
    stop = _stop_threshold(tol, g.gamma)
    for t in range(1, max_iterations + 1):
        new, _, _ = _shapley_operator(g, v)
        done = np.max(np.abs(new - v)) <= stop
        v = new
        if done:
            break
    else:
        raise RuntimeError("Shapley iteration did not reach the requested tolerance")

    tv, xs, ys = _shapley_operator(g, v)
    residual = float(np.max(np.abs(tv - v)))
    q1 = _stage_matrices(g, v)
    q2 = g.rewards[1] + g.gamma * (g.transitions @ (-v))
    profile = [xs, ys]
    gaps = best_response_gaps(g, profile)
    return SolveResult(
        q_star=[q1, q2],
        values=np.stack([v, -v]),
        profile=profile,
        exploitability=float(np.max(gaps @ g.initial)),
        exploitability_per_state=float(np.max(gaps)),
        iterations_used=t,
        residual=residual,
    )


# --- identical-interest stage games ----------------------------------------

@dataclass
class StageEquilibria:
    pure_nash: list[tuple]
    global_maxima: list[tuple]


def stage_equilibria(table, tol: float = 1e-12) -> StageEquilibria:
    """Pure Nash equilibria and global maximizers of a common-payoff table
    indexed ``[a^1, ..., a^n]``, by exhaustive enumeration."""
    table = np.asarray(table, dtype=float)
    best = table.max()
    nash, maxima = [], []
    for a in itertools.product(*(range(m) for m in table.shape)):
        here = table[a]
        stable = True
        for j in range(table.ndim):
            idx = list(a)
            idx[j] = slice(None)
            if table[tuple(idx)].max() > here + tol:
                stable = False
                break
        if stable:
            nash.append(a)
        if here >= best - tol:
            maxima.append(a)
    return StageEquilibria(nash, maxima)


def greedy_profile(g: MarkovGame, policies: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Deterministic per-state actions as a profile of point masses."""
    out = []
    for j, pol in enumerate(policies):
        pi = np.zeros((g.n_states, g.action_counts[j]))
        pi[np.arange(g.n_states), np.asarray(pol)] = 1.0
        out.append(pi)
    return out


__all__ = [
    "LPError", "MdpSolution", "SolveResult", "StageEquilibria", "best_response_gaps",
    "check_profile", "exploitability", "exploitability_per_state", "greedy_profile",
    "mdp_value_iteration", "policy_evaluation", "shapley_value_iteration",
    "solve_matrix_zero_sum", "stage_equilibria",
]
