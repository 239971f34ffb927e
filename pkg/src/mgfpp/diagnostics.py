"""Per-iteration quantities behind the convergence argument, and checks on them.

All functions read snapshots (Q-estimates and beliefs) and never modify them.
Notation used in names:

* ``value``      -- best-response value estimate ``v_k^i(s)``
* ``avg_value``  -- ``u_k^i(s) = E_{a ~ pi_k(s)} Q_k^i(s, a)`` (own belief included)
* ``delta``      -- ``v_k^i(s) - u_k^i(s) >= 0``
* ``upsilon``    -- Q-update direction ``r + gamma P v - Q``
* ``lower_upsilon`` -- ``min_{s,a} r + gamma P u - Q``, a lower bound on ``upsilon``
* ``gamma_term`` -- ``E_{a ~ pi_k(s)}[Q^i(s, a_k^j(s), a^-j) - Q^i(s, a)]``

The O(alpha^2) remainder in the one-step expansion of ``u_k`` has no explicit
constant, so it is not reconstructed; its signed constituents are recorded
instead.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import LearnerState, StepInfo, Trace, best_response_and_value, upsilon
from .game import MarkovGame, marginalize

DELTA_TOL = 1e-9
LOG_SPACE_BELOW = 1e-3


class InsufficientCadence(ValueError):
    """The trace was not recorded at every iteration over the requested window."""


# --- single-snapshot quantities --------------------------------------------

def avg_value(q: np.ndarray, beliefs: Sequence[np.ndarray]) -> np.ndarray:
    return marginalize(q, beliefs)


def gap_delta(q: np.ndarray, beliefs: Sequence[np.ndarray], player: int) -> np.ndarray:
    _, values = best_response_and_value(q, beliefs, player)
    return values - avg_value(q, beliefs)


def big_upsilon(g: MarkovGame, q: np.ndarray, values: np.ndarray, player: int) -> np.ndarray:
    return upsilon(g, q, values, player)


def lower_upsilon(g: MarkovGame, q: np.ndarray, beliefs: Sequence[np.ndarray],
                  player: int) -> float:
    u = avg_value(q, beliefs)
    return float(np.min(g.rewards[player] + g.gamma * g.continuation(u) - q))


def gamma_term(q_i: np.ndarray, beliefs: Sequence[np.ndarray], br_action_j: np.ndarray,
               j: int) -> np.ndarray:
    """Expected gain in ``Q^i`` when player ``j`` alone switches to ``br_action_j``."""
    against_j = marginalize(q_i, beliefs, keep=j)  # (S, |A^j|)
    switched = against_j[np.arange(against_j.shape[0]), br_action_j]
    return switched - avg_value(q_i, beliefs)


def strategic_equivalence_residual(q_i: np.ndarray, q_j: np.ndarray, g: MarkovGame) -> float:
    """Largest change of ``Q^i - Q^j`` under a unilateral non-controller deviation."""
    if g.controller is None:
        raise ValueError("strategic equivalence residual needs a declared controller")
    dq = q_i - q_j
    worst = 0.0
    for m in range(g.n_players):
        if m == g.controller:
            continue
        moved = np.moveaxis(dq, 1 + m, -1)
        worst = max(worst, float(np.max(moved.max(axis=-1) - moved.min(axis=-1))))
    return worst


# --- trace records ---------------------------------------------------------

@dataclass
class TraceRecord:
    """Diagnostics of iteration ``k``, taken from the state before the update."""

    k: int
    alpha: float
    beta: float
    beliefs: list[np.ndarray]
    q_change: np.ndarray  # (n,) sup-norm of Q_{k+1}^i - Q_k^i
    q_min: np.ndarray
    q_max: np.ndarray
    values: np.ndarray  # (n, S)
    avg_values: np.ndarray  # (n, S)
    delta: np.ndarray  # (n, S)
    upsilon: list[np.ndarray]  # n tables (S, A...)
    lower_upsilon: np.ndarray  # (n,)
    identity_residual: np.ndarray  # (n,) |Q_{k+1} - Q_k - beta * upsilon|, zero bitwise
    gamma_term: np.ndarray  # (n, n, S); diagonal is NaN
    q_gap: np.ndarray  # (n, n) sup-norm of Q^i - Q^j
    se_residual: np.ndarray  # (n, n); NaN without a controller
    exploitability: float = math.nan
    exploitability_per_state: float = math.nan

    @property
    def max_q_gap(self) -> float:
        return float(np.max(self.q_gap))

    @property
    def upsilon_min(self) -> np.ndarray:
        return np.array([u.min() for u in self.upsilon])


def make_record(g: MarkovGame, state: LearnerState, new: Optional[LearnerState],
                step: StepInfo, exploitability: bool = False) -> TraceRecord:
    """Build the record for ``state``; ``new`` is the state after the engine's step."""
    from .oracles import best_response_gaps

    n, S = g.n_players, g.n_states
    beliefs, q = state.beliefs, state.q
    values = np.empty((n, S))
    actions = []
    for i in range(n):
        a, v = best_response_and_value(q[i], beliefs, i)
        actions.append(a)
        values[i] = v
    avg = np.array([avg_value(q[i], beliefs) for i in range(n)])
    ups = [big_upsilon(g, q[i], values[i], i) for i in range(n)]
    lower = np.array([lower_upsilon(g, q[i], beliefs, i) for i in range(n)])
    if new is not None:
        q_change = np.array([np.max(np.abs(new.q[i] - q[i])) for i in range(n)])
        ident = np.array([np.max(np.abs(new.q[i] - (q[i] + step.beta * ups[i])))
                          for i in range(n)])
    else:
        q_change = np.full(n, math.nan)
        ident = np.full(n, math.nan)

    gam = np.full((n, n, S), math.nan)
    gap = np.zeros((n, n))
    se = np.full((n, n), math.nan)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            gam[i, j] = gamma_term(q[i], beliefs, actions[j], j)
            gap[i, j] = np.max(np.abs(q[i] - q[j]))
            if g.controller is not None:
                se[i, j] = strategic_equivalence_residual(q[i], q[j], g)
    if g.controller is not None:
        np.fill_diagonal(se, 0.0)

    expl = expl_state = math.nan
    if exploitability:
        gaps = best_response_gaps(g, beliefs)
        expl = float(np.max(gaps @ g.initial))
        expl_state = float(np.max(gaps))

    return TraceRecord(
        k=state.iteration, alpha=step.alpha, beta=step.beta,
        beliefs=[b.copy() for b in beliefs],
        q_change=q_change,
        q_min=np.array([x.min() for x in q]), q_max=np.array([x.max() for x in q]),
        values=values, avg_values=avg, delta=values - avg,
        upsilon=ups, lower_upsilon=lower, identity_residual=ident,
        gamma_term=gam, q_gap=gap, se_residual=se,
        exploitability=expl, exploitability_per_state=expl_state,
    )


# --- CSV layout ------------------------------------------------------------
# k, alpha, beta, then one block per player, then the cross-player block, then
# the scalar tail.  Joint actions in upsilon columns use the C-order flat index.

def trace_header(g: MarkovGame) -> list[str]:
    n, S = g.n_players, g.n_states
    J = int(np.prod(g.action_counts))
    cols = ["k", "alpha", "beta"]
    for i in range(n):
        p = f"p{i}"
        cols += [f"{p}_q_change", f"{p}_q_min", f"{p}_q_max", f"{p}_lower_upsilon",
                 f"{p}_upsilon_min", f"{p}_identity_residual"]
        cols += [f"{p}_value_s{s}" for s in range(S)]
        cols += [f"{p}_avg_value_s{s}" for s in range(S)]
        cols += [f"{p}_delta_s{s}" for s in range(S)]
        cols += [f"{p}_belief_s{s}_a{a}" for s in range(S) for a in range(g.action_counts[i])]
        cols += [f"{p}_upsilon_s{s}_j{j}" for s in range(S) for j in range(J)]
    for i in range(n):
        for j in range(n):
            if i != j:
                cols += [f"gamma_{i}_{j}_s{s}" for s in range(S)]
    for i in range(n):
        for j in range(i + 1, n):
            cols += [f"q_gap_{i}_{j}", f"se_residual_{i}_{j}"]
    cols += ["exploitability", "exploitability_per_state", "max_q_gap"]
    return cols


def record_row(rec: TraceRecord) -> list[float]:
    n = len(rec.beliefs)
    row = [rec.k, rec.alpha, rec.beta]
    for i in range(n):
        row += [rec.q_change[i], rec.q_min[i], rec.q_max[i], rec.lower_upsilon[i],
                rec.upsilon_min[i], rec.identity_residual[i]]
        row += list(rec.values[i]) + list(rec.avg_values[i]) + list(rec.delta[i])
        row += list(rec.beliefs[i].ravel())
        row += list(rec.upsilon[i].reshape(rec.upsilon[i].shape[0], -1).ravel())
    for i in range(n):
        for j in range(n):
            if i != j:
                row += list(rec.gamma_term[i, j])
    for i in range(n):
        for j in range(i + 1, n):
            row += [rec.q_gap[i, j], rec.se_residual[i, j]]
    row += [rec.exploitability, rec.exploitability_per_state, rec.max_q_gap]
    return row


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_trace_csv(path, g: MarkovGame, records: Sequence[TraceRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(g))
        for rec in records:
            w.writerow([_fmt(x) for x in record_row(rec)])


def trace_columns(g: MarkovGame, records: Sequence[TraceRecord]) -> dict[str, np.ndarray]:
    header = trace_header(g)
    if not records:
        return {c: np.empty(0) for c in header}
    table = np.array([record_row(r) for r in records], dtype=float)
    return {c: table[:, idx] for idx, c in enumerate(header)}


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    table = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), len(header))
    return {c: table[:, idx] for idx, c in enumerate(header)}


def trace_layout(columns: dict) -> tuple[int, int]:
    """Recover ``(n_players, n_states)`` from CSV column names."""
    players = {int(m.group(1)) for c in columns if (m := re.match(r"p(\d+)_q_min$", c))}
    states = {int(m.group(1)) for c in columns if (m := re.match(r"p0_value_s(\d+)$", c))}
    return len(players), len(states)


REQUIRED = ("k", "alpha", "beta")


def missing_columns(columns: dict) -> list[str]:
    missing = [c for c in REQUIRED if c not in columns]
    n, S = trace_layout(columns)
    if n == 0 or S == 0:
        return missing + ["p0_q_min", "p0_value_s0"]
    for i in range(n):
        for name in ("q_min", "q_max", "lower_upsilon", "upsilon_min", "identity_residual"):
            if f"p{i}_{name}" not in columns:
                missing.append(f"p{i}_{name}")
        for s in range(S):
            if f"p{i}_delta_s{s}" not in columns:
                missing.append(f"p{i}_delta_s{s}")
    return missing


# --- invariant checks ------------------------------------------------------

@dataclass(frozen=True)
class RunContext:
    """What a trace alone cannot tell: the game's class and the run's setup."""

    q_bounds: Optional[tuple] = None
    identical_interest: bool = False
    single_controller: bool = False
    corollary_condition: bool = False
    controller: Optional[int] = None
    common_init: bool = False

    @classmethod
    def for_run(cls, g: MarkovGame, initial: LearnerState) -> "RunContext":
        from .dynamics import common_q_init
        from .game import classify

        cls_flags = classify(g)
        lo, hi = g.q_bounds()
        inside = all(q.min() >= lo and q.max() <= hi for q in initial.q)
        return cls(
            q_bounds=(lo, hi) if inside else None,
            identical_interest=cls_flags.identical_interest,
            single_controller=cls_flags.single_controller,
            corollary_condition=cls_flags.corollary_condition,
            controller=g.controller,
            common_init=common_q_init(initial),
        )

    def to_dict(self) -> dict:
        return {
            "q_bounds": None if self.q_bounds is None else list(self.q_bounds),
            "identical_interest": self.identical_interest,
            "single_controller": self.single_controller,
            "corollary_condition": self.corollary_condition,
            "controller": self.controller,
            "common_init": self.common_init,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunContext":
        qb = doc.get("q_bounds")
        return cls(
            q_bounds=None if qb is None else tuple(qb),
            identical_interest=bool(doc.get("identical_interest", False)),
            single_controller=bool(doc.get("single_controller", False)),
            corollary_condition=bool(doc.get("corollary_condition", False)),
            controller=doc.get("controller"),
            common_init=bool(doc.get("common_init", False)),
        )


@dataclass(frozen=True)
class Finding:
    check: str
    k: int
    column: str
    value: float

    def to_dict(self) -> dict:
        return {"check": self.check, "k": self.k, "column": self.column, "value": self.value}


def check_invariants(columns: dict, ctx: RunContext = RunContext(),
                     tol: float = DELTA_TOL) -> list[Finding]:
    """Run every applicable invariant over a column table and list violations."""
    n, S = trace_layout(columns)
    ks = columns["k"].astype(int)
    out: list[Finding] = []

    def flag(check, column, mask, values):
        for idx in np.flatnonzero(mask):
            out.append(Finding(check, int(ks[idx]), column, float(values[idx])))

    for name, col in columns.items():
        if name.startswith("exploitability"):
            continue
        if name.startswith("gamma_") or name.startswith("se_residual"):
            continue
        bad = ~np.isfinite(col)
        if name.endswith("q_change") or name.endswith("identity_residual"):
            bad = np.isinf(col)  # NaN marks a record without a successor state
        flag("finite", name, bad, col)

    for i in range(n):
        p = f"p{i}"
        for s in range(S):
            bcols = sorted(c for c in columns if c.startswith(f"{p}_belief_s{s}_a"))
            if bcols:
                block = np.stack([columns[c] for c in bcols], axis=1)
                flag("simplex_sum", f"{p}_belief_s{s}",
                     np.abs(block.sum(axis=1) - 1.0) > 1e-9, block.sum(axis=1))
                for c in bcols:
                    flag("simplex_nonnegative", c, columns[c] < -1e-12, columns[c])
            d = columns[f"{p}_delta_s{s}"]
            flag("delta_nonnegative", f"{p}_delta_s{s}", d < -tol, d)
        lo_col, up_col = columns[f"{p}_lower_upsilon"], columns[f"{p}_upsilon_min"]
        flag("lower_upsilon_bound", f"{p}_lower_upsilon", lo_col > up_col + tol, lo_col - up_col)
        ident = columns[f"{p}_identity_residual"]
        flag("q_update_identity", f"{p}_identity_residual", (ident != 0.0) & ~np.isnan(ident), ident)
        if ctx.q_bounds is not None:
            lo, hi = ctx.q_bounds
            scale = max(1.0, abs(lo), abs(hi))
            qmin, qmax = columns[f"{p}_q_min"], columns[f"{p}_q_max"]
            flag("q_bounded_below", f"{p}_q_min", qmin < lo - 1e-12 * scale, qmin)
            flag("q_bounded_above", f"{p}_q_max", qmax > hi + 1e-12 * scale, qmax)

    c = ctx.controller
    if ctx.single_controller and ctx.common_init and c is not None:
        if ctx.identical_interest:
            for i in range(n):
                for j in range(n):
                    if i == j or j == c:
                        continue
                    for s in range(S):
                        name = f"gamma_{i}_{j}_s{s}"
                        diff = np.abs(columns[name] - columns[f"p{j}_delta_s{s}"])
                        flag("gamma_equals_delta", name, diff > tol, diff)
            for i in range(n):
                for j in range(i + 1, n):
                    name = f"se_residual_{i}_{j}"
                    flag("strategic_equivalence", name, columns[name] > tol, columns[name])
        if ctx.corollary_condition:
            for j in range(n):
                if j == c:
                    continue
                for s in range(S):
                    name = f"gamma_{c}_{j}_s{s}"
                    flag("gamma_nonnegative", name, columns[name] < -tol, columns[name])
    return out


def check_records(g: MarkovGame, trace: Trace, ctx: RunContext) -> list[Finding]:
    return check_invariants(trace_columns(g, trace.records), ctx)


# --- telescoping identities ------------------------------------------------

@dataclass(frozen=True)
class TelescopingCheck:
    """Both sides of the forward and backward telescoping identities.

    A pair is ``None`` when the index triple lies outside that identity's
    domain: the forward sum needs ``k0 <= k1 <= k2 + 1``, the backward sum
    ``k1 <= k2 + 1`` and ``k2 <= k0``.
    """

    lhs1: Optional[float]
    rhs1: Optional[float]
    lhs2: Optional[float]
    rhs2: Optional[float]

    def max_error(self) -> float:
        errs = [abs(a - b) for a, b in ((self.lhs1, self.rhs1), (self.lhs2, self.rhs2))
                if a is not None]
        return max(errs, default=0.0)


def _running_products(factors: np.ndarray) -> np.ndarray:
    """Cumulative products, through logs when a factor is close to zero."""
    if factors.size and factors.min() < LOG_SPACE_BELOW:
        with np.errstate(divide="ignore"):
            return np.exp(np.cumsum(np.log(factors)))
    return np.cumprod(factors)


def telescoping_sums(betas, k0: int, k1: int, k2: int) -> TelescopingCheck:
    """Evaluate, for step sizes ``betas`` (indexed from 0),

    forward:  sum_{k=k1}^{k2} b_k prod_{l=k0}^{k-1} (1-b_l)
                  = prod_{l=k0}^{k1-1} (1-b_l) - prod_{l=k0}^{k2} (1-b_l)
    backward: sum_{k=k1}^{k2} b_k prod_{l=k+1}^{k0} (1-b_l)
                  = prod_{l=k2+1}^{k0} (1-b_l) - prod_{l=k1}^{k0} (1-b_l)

    with empty products equal to one.
    """
    b = np.asarray(betas, dtype=float)
    K = len(b)
    if not (0 <= k0 < K and 0 <= k2 < K and 0 <= k1 <= K):
        raise IndexError(f"indices ({k0}, {k1}, {k2}) out of range for {K} step sizes")

    lhs1 = rhs1 = lhs2 = rhs2 = None
    if k0 <= k1 <= k2 + 1:
        # fwd[t] = prod_{l=k0}^{k0+t-1}, fwd[0] = 1
        fwd = np.concatenate(([1.0], _running_products(1.0 - b[k0:k2 + 1])))
        ks = np.arange(k1, k2 + 1)
        lhs1 = float(np.sum(b[ks] * fwd[ks - k0]))
        rhs1 = float(fwd[k1 - k0] - fwd[k2 + 1 - k0])
    if k1 <= k2 + 1 and k2 <= k0:
        # bwd[t] = prod_{l=t}^{k0} for t = k1..k0+1, bwd at k0+1 = 1
        tail = _running_products((1.0 - b[k1:k0 + 1])[::-1])[::-1]
        bwd = np.concatenate((tail, [1.0]))  # index t - k1
        ks = np.arange(k1, k2 + 1)
        lhs2 = float(np.sum(b[ks] * bwd[ks + 1 - k1]))
        rhs2 = float(bwd[k2 + 1 - k1] - bwd[0])
    return TelescopingCheck(lhs1, rhs1, lhs2, rhs2)


# --- accumulated lower bound -----------------------------------------------

@dataclass(frozen=True)
class TailStats:
    minimum: np.ndarray  # (n,) min over k1 <= k2 in the window of sum beta_k * lower_k
    k1: np.ndarray
    k2: np.ndarray


def _lower_series(trace: Trace):
    if trace.lower_upsilon is not None:
        return np.arange(len(trace.betas)), trace.betas, trace.lower_upsilon
    ks = np.array([r.k for r in trace.records])
    if len(ks) and np.any(np.diff(ks) != 1):
        raise InsufficientCadence("trace records are not consecutive iterations")
    betas = np.array([r.beta for r in trace.records])
    lower = np.array([r.lower_upsilon for r in trace.records])
    return ks, betas, lower


def tail_monotonicity(trace: Trace, window: int) -> TailStats:
    """Most negative partial sum ``sum_{k=k1}^{k2} beta_k * lower_upsilon_k``
    with ``k1 <= k2`` both inside the last ``window`` iterations.

    The asymptotic claim is that this tends to a non-negative limit; at
    finite horizon it is reported only.
    """
    ks, betas, lower = _lower_series(trace)
    if window < 1 or window > len(betas):
        raise InsufficientCadence(
            f"window of {window} iterations exceeds the {len(betas)} recorded consecutively")
    x = betas[-window:, None] * lower[-window:]
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    best_start = np.maximum.accumulate(csum[:-1], axis=0)
    arg_start = np.zeros_like(best_start, dtype=int)
    for p in range(x.shape[1]):
        run_idx = 0
        for t in range(window):
            if csum[t, p] >= csum[run_idx, p]:
                run_idx = t
            arg_start[t, p] = run_idx
    sums = csum[1:] - best_start
    k2 = sums.argmin(axis=0)
    cols = np.arange(x.shape[1])
    offset = ks[-window]
    return TailStats(sums[k2, cols], offset + arg_start[k2, cols], offset + k2)
