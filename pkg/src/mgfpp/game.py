"""Finite Markov games: storage, validation, classification and marginalization.

Rewards are stored densely as an array of shape ``(n, S, A^1, ..., A^n)`` and
transitions as ``(S, A^1, ..., A^n, S)``.  Strategies (and beliefs) are lists
with one ``(S, |A^j|)`` array per player.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarkovGame:
    """An n-player discounted Markov game with dense tensors.

    ``controller`` is the declared single controller, or ``None``.  Shapes are
    checked on construction; probabilistic and structural invariants are left
    to :func:`validate_game` so that malformed games can still be inspected.
    """

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float
    controller: Optional[int] = None
    states: tuple = ()
    actions: tuple = ()
    initial: Optional[np.ndarray] = None

    def __post_init__(self):
        rewards = _frozen(self.rewards)
        transitions = _frozen(self.transitions)
        if rewards.ndim < 3:
            raise ValueError("rewards must have shape (n, S, A^1, ..., A^n)")
        n = rewards.shape[0]
        if rewards.ndim != n + 2:
            raise ValueError(
                f"rewards has {rewards.ndim} axes, expected {n + 2} for {n} players")
        n_states = rewards.shape[1]
        counts = rewards.shape[2:]
        if transitions.shape != (n_states, *counts, n_states):
            raise ValueError(
                f"transitions shape {transitions.shape} does not match "
                f"(S, A..., S) = {(n_states, *counts, n_states)}")
        if self.controller is not None and not 0 <= self.controller < n:
            raise ValueError(f"controller {self.controller} out of range for {n} players")

        states = tuple(self.states) or tuple(f"s{s}" for s in range(n_states))
        if len(states) != n_states:
            raise ValueError("state names do not match the number of states")
        actions = tuple(tuple(a) for a in self.actions) or tuple(
            tuple(f"a{k}" for k in range(m)) for m in counts)
        if tuple(len(a) for a in actions) != counts:
            raise ValueError("action names do not match the action counts")

        if self.initial is None:
            initial = _frozen(np.full(n_states, 1.0 / n_states))
        else:
            initial = _frozen(self.initial)
            if initial.shape != (n_states,):
                raise ValueError("initial distribution must have one entry per state")

        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "initial", initial)

    @property
    def n_players(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(self.rewards.shape[2:])

    @property
    def reward_range(self) -> tuple[float, float]:
        return float(self.rewards.min()), float(self.rewards.max())

    def q_bounds(self) -> tuple[float, float]:
        """Interval ``[min r/(1-gamma), max r/(1-gamma)]`` that contains every Q-estimate."""
        lo, hi = self.reward_range
        return lo / (1.0 - self.gamma), hi / (1.0 - self.gamma)

    def continuation(self, values: np.ndarray) -> np.ndarray:
        """``sum_s' p(s'|s,a) values(s')`` for every ``(s, a)``."""
        return self.transitions @ values


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


@dataclass(frozen=True)
class GameClass:
    zero_sum: bool
    identical_interest: bool
    single_controller: bool
    corollary_condition: bool

    def as_dict(self) -> dict:
        return {
            "zero_sum": self.zero_sum,
            "identical_interest": self.identical_interest,
            "single_controller": self.single_controller,
            "corollary_condition": self.corollary_condition,
        }


@dataclass(frozen=True)
class InducedMdp:
    """Single-agent MDP faced by one player when the others' strategies are fixed."""

    rewards: np.ndarray  # (S, A)
    transitions: np.ndarray  # (S, A, S)
    gamma: float

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


def _label(g: MarkovGame, s: int, a: Sequence[int]) -> str:
    joint = ",".join(g.actions[j][aj] for j, aj in enumerate(a))
    return f"({g.states[s]},{joint})"


def _axis_deviation(table: np.ndarray, axis: int) -> np.ndarray:
    """``|t(.., a~, ..) - t(.., a, ..)|`` over all pairs along ``axis``.

    The result carries an extra trailing axis indexing the alternative ``a~``.
    """
    moved = np.moveaxis(table, axis, -1)
    return np.abs(moved[..., :, None] - moved[..., None, :])


def _controller_witness(g: MarkovGame, controller: int):
    """First ``(s, a, j, a~^j)`` at which transitions depend on a non-controller."""
    p = g.transitions
    n = g.n_players
    for j in range(n):
        if j == controller:
            continue
        # p axes: 0 = s, 1..n = joint action, n+1 = next state
        dev = np.moveaxis(p, n + 1, 0)  # (S', S, A...)
        diff = _axis_deviation(dev, j + 2).max(axis=0)  # (S, A^-j..., A^j, A~^j)
        bad = np.argwhere(diff > TOL)
        if len(bad):
            idx = bad[0]
            s = int(idx[0])
            rest = [int(x) for x in idx[1:-2]]
            aj, alt = int(idx[-2]), int(idx[-1])
            a = rest[:j] + [aj] + rest[j:]
            return s, tuple(a), j, alt
    return None


def validate_game(g: MarkovGame) -> ValidationReport:
    """Check every model invariant and list the violations with coordinates."""
    report = ValidationReport()
    add = report.violations.append

    if not np.all(np.isfinite(g.rewards)):
        for idx in np.argwhere(~np.isfinite(g.rewards)):
            i, s, *a = (int(x) for x in idx)
            add(Violation("reward_not_finite", (i, s, tuple(a)),
                          f"reward of player {i} not finite at {_label(g, s, a)}"))
    if not (0.0 <= g.gamma < 1.0) or math.isnan(g.gamma):
        add(Violation("discount", (), f"discount {g.gamma} outside [0, 1)"))

    p = g.transitions
    if not np.all(np.isfinite(p)):
        add(Violation("transition_not_finite", (), "transition tensor has non-finite entries"))
    for idx in np.argwhere(p < 0):
        s, *a, s2 = (int(x) for x in idx)
        add(Violation("negative_probability", (s, tuple(a), s2),
                      f"p({g.states[s2]}|{_label(g, s, a)}) = {p[tuple(idx)]} < 0"))
    sums = p.sum(axis=-1)
    for idx in np.argwhere(np.abs(sums - 1.0) > TOL):
        s, *a = (int(x) for x in idx)
        add(Violation("row_sum", (s, tuple(a)),
                      f"row sum {sums[tuple(idx)]:.12g} != 1 at {_label(g, s, a)}"))

    init = g.initial
    if np.any(init < 0) or abs(init.sum() - 1.0) > TOL:
        add(Violation("initial_distribution", (), "initial state distribution is not a probability vector"))

    if g.controller is not None:
        witness = _controller_witness(g, g.controller)
        if witness is not None:
            s, a, j, alt = witness
            add(Violation(
                "single_controller", (s, a, j, alt),
                f"transitions at {_label(g, s, a)} change when player {j} "
                f"switches to {g.actions[j][alt]} (controller is player {g.controller})"))
    return report


def _corollary_holds(g: MarkovGame, ref: int) -> bool:
    r = g.rewards
    for j in range(g.n_players):
        if j == ref:
            continue
        # deviations of player j change r^j and r^ref by the same amount
        moved_j = np.moveaxis(r[j], j + 1, -1)
        moved_ref = np.moveaxis(r[ref], j + 1, -1)
        dj = moved_j[..., None, :] - moved_j[..., :, None]
        dref = moved_ref[..., None, :] - moved_ref[..., :, None]
        if np.max(np.abs(dj - dref), initial=0.0) > TOL:
            return False
    return True


def classify(g: MarkovGame) -> GameClass:
    """Compute the structural class flags by exhaustive enumeration.

    Without a declared controller the corollary condition is reported as
    holding if some player can serve as the reference player.
    """
    r = g.rewards
    zero_sum = bool(np.max(np.abs(r.sum(axis=0))) <= TOL)
    identical = bool(np.max(np.abs(r - r[0])) <= TOL)
    single = g.controller is not None and _controller_witness(g, g.controller) is None
    if g.controller is not None:
        corollary = _corollary_holds(g, g.controller)
    else:
        corollary = any(_corollary_holds(g, i) for i in range(g.n_players))
    return GameClass(zero_sum, identical, bool(single), bool(corollary))


def marginalize(table: np.ndarray, strategies: Sequence[Optional[np.ndarray]],
                keep: Optional[int] = None) -> np.ndarray:
    """Expectation of ``table`` over every player's action except ``keep``.

    ``table`` has shape ``(S, A^1, ..., A^n, *trailing)``.  Players are
    integrated out from the last to the first, always in that order, so the
    floating-point result does not depend on the caller.
    """
    n = len(strategies)
    out = table
    for j in reversed(range(n)):
        if j == keep:
            continue
        pi = strategies[j]
        axis = 1 + j  # later axes are already gone
        shape = [pi.shape[0]] + [1] * (out.ndim - 1)
        shape[axis] = pi.shape[1]
        out = (out * pi.reshape(shape)).sum(axis=axis)
    return out


def _check_strategies(g: MarkovGame, strategies, skip=None):
    if len(strategies) != g.n_players:
        raise ValueError(f"expected {g.n_players} strategies, got {len(strategies)}")
    for j, pi in enumerate(strategies):
        if j == skip:
            continue
        if np.shape(pi) != (g.n_states, g.action_counts[j]):
            raise ValueError(
                f"strategy of player {j} has shape {np.shape(pi)}, "
                f"expected {(g.n_states, g.action_counts[j])}")


def induce_mdp(g: MarkovGame, player: int, strategies) -> InducedMdp:
    """Fix every opponent's stationary strategy and return ``player``'s MDP.

    ``strategies`` holds one entry per player; the entry for ``player`` is
    ignored and may be ``None``.
    """
    _check_strategies(g, strategies, skip=player)
    pis = [None if j == player else np.asarray(s, dtype=float) for j, s in enumerate(strategies)]
    rew = marginalize(g.rewards[player], pis, keep=player)
    trans = marginalize(g.transitions, pis, keep=player)
    return InducedMdp(rew, trans, g.gamma)


def uniform_strategies(g: MarkovGame) -> list[np.ndarray]:
    return [np.full((g.n_states, m), 1.0 / m) for m in g.action_counts]


# --- JSON format -----------------------------------------------------------

def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")


def game_from_dict(doc: dict) -> MarkovGame:
    n = int(doc["n_players"])
    states = list(doc["states"])
    actions = [list(a) for a in doc["actions"]]
    if len(actions) != n:
        raise ValueError("actions must list one action set per player")
    rewards = np.array(doc["rewards"], dtype=float)
    transitions = np.array(doc["transitions"], dtype=float)
    _check_finite("rewards", rewards)
    _check_finite("transitions", transitions)
    gamma = float(doc["gamma"])
    if not math.isfinite(gamma):
        raise ValueError("gamma must be finite")
    initial = doc.get("initial")
    if initial is not None:
        initial = np.array(initial, dtype=float)
        _check_finite("initial", initial)
    expected = (n, len(states), *(len(a) for a in actions))
    if rewards.shape != expected:
        raise ValueError(f"rewards shape {rewards.shape} != {expected}")
    controller = doc.get("controller")
    return MarkovGame(rewards, transitions, gamma,
                      controller=None if controller is None else int(controller),
                      states=tuple(states), actions=tuple(tuple(a) for a in actions),
                      initial=initial)


def game_to_dict(g: MarkovGame) -> dict:
    return {
        "n_players": g.n_players,
        "states": list(g.states),
        "actions": [list(a) for a in g.actions],
        "gamma": g.gamma,
        "controller": g.controller,
        "initial": g.initial.tolist(),
        "rewards": g.rewards.tolist(),
        "transitions": g.transitions.tolist(),
    }


def _reject_constant(token):
    raise ValueError(f"non-finite number {token} in game file")


def load_game(path) -> MarkovGame:
    with open(path) as fh:
        doc = json.load(fh, parse_constant=_reject_constant)
    return game_from_dict(doc)


def save_game(g: MarkovGame, path) -> None:
    Path(path).write_text(json.dumps(game_to_dict(g), indent=1))
