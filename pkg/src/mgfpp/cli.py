"""Command-line entry point: generate | validate | run | solve | diagnose | plot."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as diag
from .dynamics import RunConfig, StepSchedule, initial_state, max_q_gap, run
from .game import classify, game_to_dict, load_game, save_game, validate_game
from .generators import GENERATORS, GenParams, generate
from .oracles import (best_response_gaps, check_profile, policy_evaluation,
                      shapley_value_iteration)

log = logging.getLogger("mgfpp")

SUMMARY_SCHEMA = "mgfpp.summary/1"

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VIOLATIONS = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --- experiment configuration ----------------------------------------------

@dataclass
class ExperimentConfig:
    """A game source plus run settings, loaded from one JSON document."""

    game_path: Optional[Path] = None
    generator: Optional[str] = None
    gen_params: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    run: RunConfig = field(default_factory=RunConfig)
    schedule: StepSchedule = field(default_factory=StepSchedule.power_law)
    plot: bool = False

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "ExperimentConfig":
        unknown = set(doc) - {"game", "seeds", "run", "schedule", "report"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "game" not in doc:
            raise ConfigError("config needs a 'game' entry (file path or generator spec)")
        src = doc["game"]
        cfg = cls()
        if isinstance(src, str):
            path = (base / src) if not Path(src).is_absolute() else Path(src)
            if not path.exists():
                raise ConfigError(f"game file {path} does not exist")
            cfg.game_path = path
        elif isinstance(src, dict):
            kind = src.get("generator")
            if kind not in GENERATORS:
                raise ConfigError(f"unknown generator {kind!r}; choose from {sorted(GENERATORS)}")
            cfg.generator = kind
            cfg.gen_params = dict(src.get("params", {}))
            try:
                GenParams(**cfg.gen_params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad generator params: {exc}") from exc
        else:
            raise ConfigError("'game' must be a path or a generator spec")
        seeds = doc.get("seeds")
        if seeds is None:
            seeds = [int(cfg.gen_params.get("seed", 0))]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("'seeds' must be a non-empty list of non-negative integers")
        cfg.seeds = seeds
        try:
            cfg.run = RunConfig.from_dict(doc.get("run", {}))
            cfg.schedule = StepSchedule.from_dict(doc.get("schedule", {}))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad run or schedule settings: {exc}") from exc
        cfg.plot = bool(doc.get("report", {}).get("plot", False))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base=path.parent)

    def game_for(self, seed: int):
        if self.game_path is not None:
            return load_game(self.game_path)
        return generate(self.generator, GenParams(**{**self.gen_params, "seed": seed}))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _write_json(path: Path, doc: dict) -> None:
    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v
    path.write_text(json.dumps(clean(doc), indent=1, default=_jsonable) + "\n")


def load_summary(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SUMMARY_SCHEMA:
        raise ValueError(f"{path} is not a {SUMMARY_SCHEMA} document")
    return doc


def run_one(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    g = cfg.game_for(seed)
    report = validate_game(g)
    if not report.ok:
        raise ValueError("invalid game: " + "; ".join(report.messages()))
    out.mkdir(parents=True, exist_ok=True)
    save_game(g, out / "game.json")
    init = initial_state(g, cfg.run)
    ctx = diag.RunContext.for_run(g, init)

    t0 = time.perf_counter()
    final, trace = run(g, cfg.run, cfg.schedule, state=init)
    wall = time.perf_counter() - t0

    diag.write_trace_csv(out / "trace.csv", g, trace.records)
    gaps = best_response_gaps(g, final.beliefs)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "seed": seed,
        "iterations": final.iteration,
        "stopped_early": trace.stopped_early,
        "final_exploitability": float(np.max(gaps @ g.initial)),
        "final_exploitability_per_state": float(np.max(gaps)),
        "max_q_gap": max_q_gap(final.q),
        "schedule": cfg.schedule.to_dict(),
        "schedule_conditions": trace.schedule_report.to_dict(),
        "game_class": classify(g).as_dict(),
        "context": ctx.to_dict(),
        "run": cfg.run.to_dict(),
        "final_beliefs": [b.tolist() for b in final.beliefs],
        "final_q": [q.tolist() for q in final.q],
        "trace_rows": len(trace.records),
        "wall_time_s": wall,
    }
    _write_json(out / "summary.json", summary)
    log.info("seed %d: %d iterations, exploitability %.3g", seed, final.iteration,
             summary["final_exploitability_per_state"])
    return summary


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.cadence is not None:
            cfg.run = RunConfig.from_dict({**cfg.run.to_dict(), "cadence": args.cadence})
        if args.seed is not None:
            cfg.seeds = [args.seed]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    multi = len(cfg.seeds) > 1
    targets = [(s, out / f"seed_{s}" if multi else out) for s in cfg.seeds]
    try:
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            summaries = list(pool.map(lambda t: run_one(cfg, *t), targets))
    except Exception as exc:  # reported, not raised: exit code carries the failure
        print(f"error: run failed: {exc}", file=sys.stderr)
        log.debug("run failure", exc_info=True)
        return EXIT_RUNTIME
    if cfg.plot:  # pyplot is not thread-safe, so plot after the pool
        for _, target in targets:
            plot_trace(target / "trace.csv", target)
    if multi:
        _write_json(out / "summaries.json", {"runs": summaries})
    return EXIT_OK


# --- other commands --------------------------------------------------------

def _gen_params_from_args(args) -> tuple[str, GenParams]:
    doc = {}
    kind = args.kind
    if args.config:
        spec = json.loads(Path(args.config).read_text())
        spec = spec.get("game", spec)
        kind = spec.get("generator", kind)
        doc.update(spec.get("params", {}))
    overrides = {
        "n_players": args.players, "n_states": args.states, "actions": args.actions,
        "gamma": args.gamma, "controller": args.controller, "concentration": args.concentration,
        "deviation_scale": args.deviation_scale,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.reward_range is not None:
        doc["reward_range"] = tuple(args.reward_range)
    if args.seed is not None:
        doc["seed"] = args.seed
    if isinstance(doc.get("actions"), list) and len(doc["actions"]) == 1:
        doc["actions"] = doc["actions"][0]
    if kind is None:
        raise ConfigError("choose a generator with --kind or a config file")
    return kind, GenParams(**doc)


def cmd_generate(args) -> int:
    try:
        kind, params = _gen_params_from_args(args)
        g = generate(kind, params)
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(game_to_dict(g), indent=1)
    if args.out:
        out = Path(args.out)
        if out.is_dir() or str(args.out).endswith(os.sep):
            out.mkdir(parents=True, exist_ok=True)
            out = out / f"{kind}_seed{params.seed}.json"
        out.write_text(text)
        print(out)
    else:
        print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        g = load_game(args.game)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = validate_game(g)
    doc = {"valid": report.ok, "violations": report.messages()}
    if report.ok:
        doc["class"] = classify(g).as_dict()
    print(json.dumps(doc, indent=1))
    return EXIT_OK if report.ok else EXIT_CONFIG


def cmd_solve(args) -> int:
    try:
        g = load_game(args.game)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not validate_game(g).ok:
        print("error: game fails validation", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.profile:
        try:
            profile = [np.array(p, dtype=float) for p in json.loads(Path(args.profile).read_text())["profile"]]
            check_profile(g, profile, tol=1e-9)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: bad profile: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        gaps = best_response_gaps(g, profile)
        doc = {
            "mode": "certify",
            "profile": [p.tolist() for p in profile],
            "values": policy_evaluation(g, profile).tolist(),
            "best_response_gaps": gaps.tolist(),
            "exploitability": float(np.max(gaps @ g.initial)),
            "exploitability_per_state": float(np.max(gaps)),
        }
    else:
        cls = classify(g)
        if g.n_players != 2 or not cls.zero_sum:
            print("error: Shapley iteration needs a two-player zero-sum game; "
                  "pass --profile to certify a profile instead", file=sys.stderr)
            return EXIT_CONFIG
        try:
            res = shapley_value_iteration(g, tol=args.tol)
        except Exception as exc:
            print(f"error: solver failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        doc = {"mode": "shapley", "tol": args.tol, **res.to_dict()}
    _write_json(out / "solve.json", doc)
    return EXIT_OK


def diagnose_columns(columns: dict, ctx: diag.RunContext, checks: set, seed: int,
                     n_triples: int = 1000) -> dict:
    findings = diag.check_invariants(columns, ctx) if "invariants" in checks else []
    doc = {"violations": [f.to_dict() for f in findings]}
    if "telescoping" in checks:
        betas = columns["beta"]
        rng = np.random.default_rng(seed)
        worst, count = 0.0, 0
        if len(betas):
            for _ in range(n_triples):
                a, b, c = np.sort(rng.integers(0, len(betas), size=3))
                fwd = diag.telescoping_sums(betas, int(a), int(b), int(c))
                bwd = diag.telescoping_sums(betas, int(c), int(a), int(b))
                err = max(fwd.max_error(), bwd.max_error())
                worst = max(worst, err)
                count += 1
                if err > 1e-10:
                    doc["violations"].append({"check": "telescoping", "k": -1,
                                              "column": f"beta[{a},{b},{c}]", "value": err})
        doc["telescoping"] = {"triples": count, "max_error": worst}
    doc["ok"] = not doc["violations"]
    return doc


def cmd_diagnose(args) -> int:
    try:
        columns = diag.read_trace_csv(args.trace)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    missing = diag.missing_columns(columns)
    if missing:
        print(f"error: trace is missing columns: {', '.join(missing[:10])}", file=sys.stderr)
        return EXIT_CONFIG
    summary_path = Path(args.summary) if args.summary else Path(args.trace).with_name("summary.json")
    ctx = diag.RunContext()
    if summary_path.exists():
        ctx = diag.RunContext.from_dict(load_summary(summary_path).get("context", {}))
    elif args.summary:
        print(f"error: summary {summary_path} not found", file=sys.stderr)
        return EXIT_CONFIG
    checks = set(args.checks.split(","))
    unknown = checks - {"invariants", "telescoping"}
    if unknown:
        print(f"error: unknown checks {sorted(unknown)}", file=sys.stderr)
        return EXIT_CONFIG
    doc = diagnose_columns(columns, ctx, checks, args.seed if args.seed is not None else 0)
    out = Path(args.out) if args.out else Path(args.trace).parent
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "diagnose.json", doc)
    for v in doc["violations"][:20]:
        print(f"violation: {v['check']} at k={v['k']} ({v['column']} = {v['value']:.3g})",
              file=sys.stderr)
    return EXIT_OK if doc["ok"] else EXIT_VIOLATIONS


def plot_trace(trace_path, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = diag.read_trace_csv(trace_path)
    n, S = diag.trace_layout(cols)
    k = cols["k"]
    written = []

    fig, axes = plt.subplots(n, 1, figsize=(7, 2.4 * n), sharex=True, squeeze=False)
    for i in range(n):
        ax = axes[i, 0]
        for c in sorted(c for c in cols if c.startswith(f"p{i}_belief_")):
            ax.plot(k, cols[c], lw=0.8, label=c.split("_", 2)[2])
        ax.set_ylabel(f"player {i}")
        ax.set_ylim(-0.02, 1.02)
        if S * 2 <= 12:
            ax.legend(fontsize=6, ncol=2, loc="upper right")
    axes[-1, 0].set_xlabel("iteration")
    fig.suptitle("beliefs")
    fig.tight_layout()
    written.append(out / "beliefs.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    series = [("exploitability_per_state", "exploitability.png"), ("max_q_gap", "q_gap.png")]
    for name, fname in series:
        y = cols.get(name)
        if y is None or not np.any(np.isfinite(y)):
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        mask = np.isfinite(y) & (y > 0) & (k > 0)
        ax.loglog(k[mask], y[mask], lw=1)
        ax.set_xlabel("iteration")
        ax.set_ylabel(name.replace("_", " "))
        fig.tight_layout()
        written.append(out / fname)
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    return written


def cmd_plot(args) -> int:
    out = Path(args.out) if args.out else Path(args.trace).parent
    out.mkdir(parents=True, exist_ok=True)
    try:
        for p in plot_trace(args.trace, out):
            print(p)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgfpp", description="Two-timescale fictitious play in single-controller Markov games")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded game in the JSON game format")
    p.add_argument("--kind", choices=sorted(GENERATORS))
    p.add_argument("--config", help="JSON generator spec {generator, params}")
    p.add_argument("--seed", type=int)
    p.add_argument("--players", type=int)
    p.add_argument("--states", type=int)
    p.add_argument("--actions", type=int, nargs="+")
    p.add_argument("--gamma", type=float)
    p.add_argument("--controller", type=int)
    p.add_argument("--concentration", type=float)
    p.add_argument("--deviation-scale", type=float)
    p.add_argument("--reward-range", type=float, nargs=2)
    p.add_argument("--out", help="output file or directory (default: stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check a game file and print its class")
    p.add_argument("game")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the dynamics and write trace.csv and summary.json")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="run only this generator seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cadence", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve", help="Shapley solve, or certify a supplied profile")
    p.add_argument("game")
    p.add_argument("--profile", help="JSON file {profile: [[[...]]]} to certify")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("diagnose", help="re-check trace invariants offline")
    p.add_argument("trace")
    p.add_argument("--summary", help="summary.json with the run context (default: next to the trace)")
    p.add_argument("--checks", default="invariants,telescoping")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("plot", help="static convergence plots from a trace")
    p.add_argument("trace")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MGFPP_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
