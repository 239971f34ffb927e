"""Seeded construction of single-controller games in each covered class.

Random numbers come from SplitMix64 so that any language can regenerate the
same instances:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)                      (all arithmetic mod 2^64)

A uniform double in (0, 1) is ``((x >> 11) + 0.5) / 2^53``.  Each tensor draws
from its own child stream, seeded with the parent's next output XOR the
FNV-1a hash of the tensor's label, and fills in C order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .game import MarkovGame

MASK = (1 << 64) - 1


def fnv1a(label: str) -> int:
    h = 0xCBF29CE484222325
    for byte in label.encode():
        h = ((h ^ byte) * 0x100000001B3) & MASK
    return h


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return ((self.next_u64() >> 11) + 0.5) / 9007199254740992.0

    def uniforms(self, shape) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        return np.array([self.uniform() for _ in range(size)]).reshape(shape)

    def split(self, label: str) -> "SplitMix64":
        return SplitMix64(self.next_u64() ^ fnv1a(label))


@dataclass(frozen=True)
class GenParams:
    """Size and sampling parameters for a generated game.

    ``concentration`` sharpens transition rows as it decreases: each row is
    ``w / sum(w)`` with ``w = (-log u)^(1/concentration)``, which is a flat
    Dirichlet draw at ``concentration = 1``.  ``deviation_scale`` bounds the
    per-player offsets used by :func:`gen_corollary_game`.
    """

    n_players: int = 2
    n_states: int = 3
    actions: Union[int, Sequence[int]] = 2
    gamma: float = 0.6
    reward_range: tuple = (-1.0, 1.0)
    concentration: float = 1.0
    controller: int = 0
    seed: int = 0
    deviation_scale: float = 1.0

    def __post_init__(self):
        if self.n_players < 1 or self.n_states < 1:
            raise ValueError("game sizes must be at least 1")
        counts = self.action_counts
        if len(counts) != self.n_players or min(counts) < 1:
            raise ValueError("need one positive action count per player")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        lo, hi = self.reward_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError("reward range must be finite with lo <= hi")
        if not 0 <= self.controller < self.n_players:
            raise ValueError("controller index out of range")
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")

    @property
    def action_counts(self) -> tuple[int, ...]:
        if isinstance(self.actions, int):
            return (self.actions,) * self.n_players
        return tuple(int(a) for a in self.actions)

    def to_dict(self) -> dict:
        return {
            "n_players": self.n_players, "n_states": self.n_states,
            "actions": list(self.action_counts), "gamma": self.gamma,
            "reward_range": list(self.reward_range), "concentration": self.concentration,
            "controller": self.controller, "seed": self.seed,
            "deviation_scale": self.deviation_scale,
        }


def _rewards(rng: SplitMix64, p: GenParams, shape) -> np.ndarray:
    lo, hi = p.reward_range
    return lo + (hi - lo) * rng.uniforms(shape)


def _controlled_transitions(rng: SplitMix64, p: GenParams) -> np.ndarray:
    """Rows sampled per (s, controller action) and copied across the others."""
    counts = p.action_counts
    S, c = p.n_states, p.controller
    w = (-np.log(rng.uniforms((S, counts[c], S)))) ** (1.0 / p.concentration)
    rows = w / w.sum(axis=-1, keepdims=True)
    shape = [S] + [1] * p.n_players + [S]
    shape[1 + c] = counts[c]
    return np.broadcast_to(rows.reshape(shape), (S, *counts, S)).copy()


def gen_identical_single_controller(p: GenParams) -> MarkovGame:
    root = SplitMix64(p.seed)
    r = _rewards(root.split("rewards"), p, (p.n_states, *p.action_counts))
    trans = _controlled_transitions(root.split("transitions"), p)
    return MarkovGame(np.stack([r] * p.n_players), trans, p.gamma, controller=p.controller)


def gen_zero_sum_single_controller(p: GenParams) -> MarkovGame:
    if p.n_players != 2:
        raise ValueError("zero-sum generator needs exactly two players")
    root = SplitMix64(p.seed)
    r = _rewards(root.split("rewards"), p, (p.n_states, *p.action_counts))
    trans = _controlled_transitions(root.split("transitions"), p)
    return MarkovGame(np.stack([r, -r]), trans, p.gamma, controller=p.controller)


def gen_corollary_game(p: GenParams) -> MarkovGame:
    """Rewards ``r^j = phi + psi^j(s, a^c)`` for non-controllers ``j`` and
    ``r^c = phi``, so a non-controller's deviation moves its own payoff and
    the controller's payoff by the same amount."""
    root = SplitMix64(p.seed)
    counts = p.action_counts
    c = p.controller
    phi = _rewards(root.split("rewards"), p, (p.n_states, *counts))
    trans = _controlled_transitions(root.split("transitions"), p)
    psi_rng = root.split("offsets")
    rewards = []
    shape = [p.n_states] + [1] * p.n_players
    shape[1 + c] = counts[c]
    for j in range(p.n_players):
        if j == c:
            rewards.append(phi)
            continue
        psi = p.deviation_scale * (2.0 * psi_rng.uniforms((p.n_states, counts[c])) - 1.0)
        rewards.append(phi + psi.reshape(shape))
    return MarkovGame(np.stack(rewards), trans, p.gamma, controller=c)


GENERATORS = {
    "identical": gen_identical_single_controller,
    "zero_sum": gen_zero_sum_single_controller,
    "corollary": gen_corollary_game,
}


def generate(kind: str, params: GenParams) -> MarkovGame:
    try:
        fn = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown generator {kind!r}; choose from {sorted(GENERATORS)}") from None
    return fn(params)
