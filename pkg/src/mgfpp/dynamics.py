"""Synchronous model-based two-timescale fictitious play.

Every iteration each player computes, at every state, its best response to the
current beliefs about the others, then

* the shared belief about each player moves toward that player's best response
  with step ``alpha_k``;
* each player's local Q-estimate moves toward ``r + gamma * P v`` with step
  ``beta_k``, where ``v`` is the player's own value estimate.

All reads happen before any write, so the order in which players and states
are visited has no effect.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .game import MarkovGame, marginalize

log = logging.getLogger(__name__)


class ScheduleExhausted(IndexError):
    """A custom step-size table has no entry for the requested iteration."""


# --- step sizes ------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequences ``(alpha_k, beta_k)`` for beliefs and Q-estimates.

    ``power_law`` uses ``alpha_k = (k+1)^-rho_alpha`` and
    ``beta_k = (k+1)^-rho_beta``.
    """

    kind: str
    rho_alpha: float = 0.0
    rho_beta: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    alphas: tuple = ()
    betas: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power_law", "constant", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "custom" and len(self.alphas) != len(self.betas):
            raise ValueError("custom schedule needs alpha and beta tables of equal length")

    @classmethod
    def power_law(cls, rho_alpha: float = 0.6, rho_beta: float = 0.9) -> "StepSchedule":
        return cls("power_law", rho_alpha=float(rho_alpha), rho_beta=float(rho_beta))

    @classmethod
    def constant(cls, alpha: float, beta: float) -> "StepSchedule":
        return cls("constant", alpha=float(alpha), beta=float(beta))

    @classmethod
    def custom(cls, alphas: Sequence[float], betas: Sequence[float]) -> "StepSchedule":
        return cls("custom", alphas=tuple(float(a) for a in alphas),
                   betas=tuple(float(b) for b in betas))

    def rates(self, k: int) -> tuple[float, float]:
        if self.kind == "power_law":
            return (k + 1.0) ** -self.rho_alpha, (k + 1.0) ** -self.rho_beta
        if self.kind == "constant":
            return self.alpha, self.beta
        if k >= len(self.alphas):
            raise ScheduleExhausted(
                f"custom schedule has {len(self.alphas)} entries, iteration {k} requested")
        return self.alphas[k], self.betas[k]

    def beta_slice(self, start: int, stop: int) -> np.ndarray:
        """``beta_k`` for ``start <= k < stop`` as an array."""
        if self.kind == "power_law":
            return (np.arange(start, stop, dtype=float) + 1.0) ** -self.rho_beta
        if self.kind == "constant":
            return np.full(stop - start, self.beta)
        if stop > len(self.betas):
            raise ScheduleExhausted(f"custom schedule has only {len(self.betas)} entries")
        return np.array(self.betas[start:stop])

    def to_dict(self) -> dict:
        if self.kind == "power_law":
            return {"kind": "power_law", "rho_alpha": self.rho_alpha, "rho_beta": self.rho_beta}
        if self.kind == "constant":
            return {"kind": "constant", "alpha": self.alpha, "beta": self.beta}
        return {"kind": "custom", "alphas": list(self.alphas), "betas": list(self.betas)}

    @classmethod
    def from_dict(cls, doc: dict) -> "StepSchedule":
        kind = doc.get("kind", "power_law")
        if kind == "power_law":
            return cls.power_law(doc.get("rho_alpha", 0.6), doc.get("rho_beta", 0.9))
        if kind == "constant":
            return cls.constant(doc["alpha"], doc["beta"])
        if kind == "custom":
            return cls.custom(doc["alphas"], doc["betas"])
        raise ValueError(f"unknown schedule kind {kind!r}")


SATISFIED, VIOLATED, UNDECIDABLE = "satisfied", "violated", "undecidable"


@dataclass(frozen=True)
class ScheduleReport:
    """Status of each step-size condition: vanishing rates (i), divergent sums
    (ii), square-summable belief steps (iii) and the two-timescale condition
    (iv), which splits into ``alpha_k >= beta_k`` pointwise and
    ``beta_k / alpha_k -> 0``."""

    vanishing: str
    divergent_sums: str
    square_summable: str
    pointwise_order: str
    ratio_limit: str

    @property
    def two_timescale(self) -> str:
        parts = (self.pointwise_order, self.ratio_limit)
        if VIOLATED in parts:
            return VIOLATED
        if UNDECIDABLE in parts:
            return UNDECIDABLE
        return SATISFIED

    @property
    def conditions(self) -> dict:
        return {"i": self.vanishing, "ii": self.divergent_sums,
                "iii": self.square_summable, "iv": self.two_timescale}

    @property
    def all_satisfied(self) -> bool:
        return all(v == SATISFIED for v in self.conditions.values())

    def to_dict(self) -> dict:
        return {**self.conditions, "iv_pointwise": self.pointwise_order,
                "iv_limit": self.ratio_limit, "all_satisfied": self.all_satisfied}


def _flag(ok: bool) -> str:
    return SATISFIED if ok else VIOLATED


def validate_schedule(sched: StepSchedule) -> ScheduleReport:
    """Decide the four step-size conditions for ``sched``.

    Power laws are decided from the exponents via p-series facts.  A custom
    table is finite, so only the pointwise ordering can be checked.
    """
    if sched.kind == "power_law":
        ra, rb = sched.rho_alpha, sched.rho_beta
        return ScheduleReport(
            vanishing=_flag(ra > 0 and rb > 0),
            divergent_sums=_flag(ra <= 1 and rb <= 1),
            square_summable=_flag(2 * ra > 1),
            pointwise_order=_flag(ra <= rb),
            ratio_limit=_flag(ra < rb),
        )
    if sched.kind == "constant":
        a, b = sched.alpha, sched.beta
        return ScheduleReport(
            vanishing=_flag(a == 0 and b == 0),
            divergent_sums=_flag(a > 0 and b > 0),
            square_summable=_flag(a == 0),
            pointwise_order=_flag(a >= b),
            ratio_limit=_flag(a > 0 and b == 0),
        )
    pointwise = all(a >= b for a, b in zip(sched.alphas, sched.betas))
    return ScheduleReport(UNDECIDABLE, UNDECIDABLE, UNDECIDABLE, _flag(pointwise), UNDECIDABLE)


# --- learner state ---------------------------------------------------------

@dataclass
class LearnerState:
    """Beliefs about every player's stationary strategy and each player's local Q."""

    beliefs: list[np.ndarray]
    q: list[np.ndarray]
    iteration: int = 0

    def copy(self) -> "LearnerState":
        return LearnerState([b.copy() for b in self.beliefs],
                            [q.copy() for q in self.q], self.iteration)


@dataclass
class RunConfig:
    """Settings for :func:`run`.

    ``q_init`` is ``"zeros"``, a number (constant Q_0 for every player) or a
    list of per-player arrays.  ``belief_init`` is ``"uniform"`` or a list of
    ``(S, |A^j|)`` arrays.  With ``stop_epsilon`` set, the run ends at the
    first recorded iteration whose per-state exploitability is below it.
    """

    max_iterations: int = 10_000
    q_init: Union[str, float, list] = "zeros"
    belief_init: Union[str, list] = "uniform"
    tie_break: str = "lowest_index"
    cadence: int = 1
    stop_epsilon: Optional[float] = None
    record_exploitability: bool = False
    track_lower_upsilon: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        if self.stop_epsilon is not None and not self.stop_epsilon > 0:
            raise ValueError("stop_epsilon must be positive")
        if self.tie_break != "lowest_index":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")

    def to_dict(self) -> dict:
        def plain(x):
            if isinstance(x, list):
                return [np.asarray(a).tolist() for a in x]
            return x
        return {
            "max_iterations": self.max_iterations,
            "q_init": plain(self.q_init),
            "belief_init": plain(self.belief_init),
            "tie_break": self.tie_break,
            "cadence": self.cadence,
            "stop_epsilon": self.stop_epsilon,
            "record_exploitability": self.record_exploitability,
            "track_lower_upsilon": self.track_lower_upsilon,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown run options: {sorted(unknown)}")
        return cls(**doc)


def initial_state(g: MarkovGame, config: RunConfig) -> LearnerState:
    shape = (g.n_states, *g.action_counts)
    qi = config.q_init
    if isinstance(qi, str):
        if qi != "zeros":
            raise ValueError(f"unknown q_init {qi!r}")
        q = [np.zeros(shape) for _ in range(g.n_players)]
    elif isinstance(qi, (int, float)):
        q = [np.full(shape, float(qi)) for _ in range(g.n_players)]
    else:
        q = [np.array(a, dtype=float) for a in qi]
        if len(q) != g.n_players or any(a.shape != shape for a in q):
            raise ValueError(f"q_init must hold {g.n_players} arrays of shape {shape}")

    bi = config.belief_init
    if isinstance(bi, str):
        if bi != "uniform":
            raise ValueError(f"unknown belief_init {bi!r}")
        beliefs = [np.full((g.n_states, m), 1.0 / m) for m in g.action_counts]
    else:
        beliefs = [np.array(b, dtype=float) for b in bi]
        if [b.shape for b in beliefs] != [(g.n_states, m) for m in g.action_counts]:
            raise ValueError("belief_init shapes do not match the game")
    return LearnerState(beliefs, q, 0)


def common_q_init(state: LearnerState) -> bool:
    return all(np.array_equal(q, state.q[0]) for q in state.q[1:])


# --- one step --------------------------------------------------------------

def expected_q(q: np.ndarray, beliefs: Sequence[np.ndarray], player: int) -> np.ndarray:
    """Expected Q of each own action against the others' beliefs, shape ``(S, |A^i|)``."""
    return marginalize(q, beliefs, keep=player)


def best_response_and_value(q: np.ndarray, beliefs: Sequence[np.ndarray], player: int,
                            tie_break: str = "lowest_index") -> tuple[np.ndarray, np.ndarray]:
    """Best-response action and value estimate at every state.

    Ties go to the lowest action index, so the value is exactly the expected Q
    of the returned action.
    """
    if tie_break != "lowest_index":
        raise ValueError(f"unsupported tie_break {tie_break!r}")
    eq = expected_q(q, beliefs, player)
    actions = eq.argmax(axis=1)
    values = eq[np.arange(eq.shape[0]), actions]
    return actions, values


def upsilon(g: MarkovGame, q: np.ndarray, values: np.ndarray, player: int) -> np.ndarray:
    """Q-update direction ``r^i + gamma * P v - Q``; the engine steps along it."""
    return g.rewards[player] + g.gamma * g.continuation(values) - q


def _belief_step(pi: np.ndarray, actions: np.ndarray, alpha: float) -> np.ndarray:
    vertex = np.zeros_like(pi)
    vertex[np.arange(pi.shape[0]), actions] = 1.0
    return pi + alpha * (vertex - pi)


@dataclass
class StepInfo:
    """Quantities read from the pre-update state during one step."""

    alpha: float
    beta: float
    actions: list[np.ndarray]
    values: list[np.ndarray]


def fp_step(state: LearnerState, g: MarkovGame, sched: StepSchedule,
            info: Optional[list] = None) -> LearnerState:
    """Advance the dynamics by one synchronous iteration.

    If ``info`` is a list, a :class:`StepInfo` for this step is appended to it.
    """
    k = state.iteration
    alpha, beta = sched.rates(k)
    actions, values = [], []
    for i in range(g.n_players):
        a, v = best_response_and_value(state.q[i], state.beliefs, i)
        actions.append(a)
        values.append(v)
    beliefs = [_belief_step(pi, a, alpha) for pi, a in zip(state.beliefs, actions)]
    q = [state.q[i] + beta * upsilon(g, state.q[i], values[i], i) for i in range(g.n_players)]
    if info is not None:
        info.append(StepInfo(alpha, beta, actions, values))
    return LearnerState(beliefs, q, k + 1)


# --- full run --------------------------------------------------------------

@dataclass
class Trace:
    """Recorded diagnostics plus optional per-iteration lower-bound series."""

    records: list = field(default_factory=list)
    schedule_report: Optional[ScheduleReport] = None
    common_init: bool = True
    stopped_early: bool = False
    # one row per iteration when RunConfig.track_lower_upsilon is set
    betas: Optional[np.ndarray] = None
    lower_upsilon: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.records)


def run(g: MarkovGame, config: RunConfig, sched: StepSchedule,
        state: Optional[LearnerState] = None) -> tuple[LearnerState, Trace]:
    """Iterate :func:`fp_step` and record diagnostics every ``config.cadence`` steps.

    Records are taken at iterations ``k`` with ``k % cadence == 0`` and describe
    the state before that step.  The run proceeds even when the schedule fails
    the convergence conditions; the report is attached to the trace.
    """
    from .diagnostics import lower_upsilon, make_record  # diagnostics imports this module

    report = validate_schedule(sched)
    if not report.all_satisfied:
        log.info("schedule conditions not all satisfied: %s", report.conditions)
    if state is None:
        state = initial_state(g, config)
    trace = Trace(schedule_report=report, common_init=common_q_init(state))
    track = config.track_lower_upsilon
    betas, lowers = [], []

    for _ in range(config.max_iterations):
        k = state.iteration
        recording = k % config.cadence == 0
        info: list = []
        new = fp_step(state, g, sched, info)
        step = info[0]
        if track:
            betas.append(step.beta)
            lowers.append([lower_upsilon(g, state.q[i], state.beliefs, i)
                           for i in range(g.n_players)])
        if recording:
            want_expl = config.record_exploitability or config.stop_epsilon is not None
            rec = make_record(g, state, new, step, exploitability=want_expl)
            trace.records.append(rec)
            if config.stop_epsilon is not None and rec.exploitability_per_state < config.stop_epsilon:
                state = new
                trace.stopped_early = True
                break
        state = new

    if track:
        trace.betas = np.array(betas)
        trace.lower_upsilon = np.array(lowers).reshape(len(betas), g.n_players)
    return state, trace


def max_q_gap(q: Sequence[np.ndarray]) -> float:
    """``max_{i,j} ||Q^i - Q^j||_inf``."""
    gap = 0.0
    for i in range(len(q)):
        for j in range(i + 1, len(q)):
            gap = max(gap, float(np.max(np.abs(q[i] - q[j]))))
    return gap


