import json
import subprocess
import sys

import numpy as np
import pytest

from mgfpp import cli
from mgfpp.diagnostics import read_trace_csv
from mgfpp.game import load_game, save_game


def write(path, doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def pennies_file(tmp_path, pennies):
    path = tmp_path / "pennies.json"
    save_game(pennies, path)
    return path


def test_generate_and_validate(tmp_path, capsys):
    out = tmp_path / "g.json"
    assert cli.main(["generate", "--kind", "corollary", "--players", "3", "--seed", "4",
                     "--out", str(out)]) == 0
    g = load_game(out)
    assert g.n_players == 3
    capsys.readouterr()
    assert cli.main(["validate", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["valid"] and report["class"]["corollary_condition"]
    doc = json.loads(out.read_text())
    doc["transitions"][0][0][0][0][0] += 0.5
    write(tmp_path / "bad.json", doc)
    assert cli.main(["validate", str(tmp_path / "bad.json")]) == 1
    assert "row sum" in capsys.readouterr().out


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        cli.main(["generate", "--kind", "identical", "--seed", "9", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_run_pennies(tmp_path, pennies_file):
    cfg = write(tmp_path / "cfg.json", {
        "game": str(pennies_file),
        "run": {"max_iterations": 100_000, "cadence": 1000},
        "schedule": {"kind": "power_law", "rho_alpha": 0.6, "rho_beta": 0.9},
    })
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    summary = cli.load_summary(out / "summary.json")
    for b in summary["final_beliefs"]:
        assert np.max(np.abs(np.array(b) - 0.5)) <= 0.05
    assert summary["schedule_conditions"]["all_satisfied"]
    assert {"final_exploitability", "final_exploitability_per_state", "max_q_gap",
            "wall_time_s"} <= set(summary)
    lines = (out / "trace.csv").read_text().splitlines()
    assert len(lines) == 101


def test_run_is_byte_deterministic(tmp_path):
    cfg = write(tmp_path / "cfg.json", {
        "game": {"generator": "identical", "params": {"n_players": 3, "seed": 5}},
        "run": {"max_iterations": 300, "cadence": 3},
    })
    for name in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a/trace.csv").read_bytes() == (tmp_path / "b/trace.csv").read_bytes()


def test_run_seed_fan_out_matches_serial(tmp_path):
    cfg = write(tmp_path / "cfg.json", {
        "game": {"generator": "zero_sum", "params": {}},
        "seeds": [3, 1, 2],
        "run": {"max_iterations": 200, "cadence": 10},
    })
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "par"), "--jobs", "3"]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "ser")]) == 0
    merged = json.loads((tmp_path / "par/summaries.json").read_text())
    assert [r["seed"] for r in merged["runs"]] == [3, 1, 2]
    for s in (1, 2, 3):
        assert ((tmp_path / f"par/seed_{s}/trace.csv").read_bytes()
                == (tmp_path / f"ser/seed_{s}/trace.csv").read_bytes())


def test_run_cadence_and_seed_flags(tmp_path):
    cfg = write(tmp_path / "cfg.json", {
        "game": {"generator": "identical", "params": {}},
        "seeds": [0, 1],
        "run": {"max_iterations": 100},
    })
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "7",
                     "--cadence", "25"]) == 0
    assert cli.load_summary(out / "summary.json")["seed"] == 7
    assert len(read_trace_csv(out / "trace.csv")["k"]) == 4


@pytest.mark.parametrize("doc", [
    {"game": "missing.json"},
    {"game": {"generator": "nope"}},
    {"game": {"generator": "identical"}, "run": {"cadence": 0}},
    {"game": {"generator": "identical"}, "bogus": 1},
    {"game": {"generator": "identical"}, "schedule": {"kind": "wavy"}},
])
def test_run_invalid_config(tmp_path, doc, capsys):
    cfg = write(tmp_path / "cfg.json", doc)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


def test_run_runtime_failure(tmp_path, capsys):
    cfg = write(tmp_path / "cfg.json", {
        "game": {"generator": "identical", "params": {}},
        "run": {"max_iterations": 5},
        "schedule": {"kind": "custom", "alphas": [0.5], "betas": [0.5]},
    })
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "custom schedule" in capsys.readouterr().err


def test_solve_shapley_single_state(tmp_path):
    m = np.array([[1.0, 0.0], [2.0, 1.0]])
    from conftest import single_state
    path = tmp_path / "g.json"
    save_game(single_state(m, -m, gamma=0.5), path)
    assert cli.main(["solve", str(path), "--out", str(tmp_path), "--tol", "1e-10"]) == 0
    doc = json.loads((tmp_path / "solve.json").read_text())
    assert np.allclose(doc["values"][0], [1.0 / (1 - 0.5)], atol=1e-9)
    assert np.allclose(doc["q_star"][0], m + 0.5 * 2.0, atol=1e-9)


def test_solve_certify_profiles(tmp_path, pennies_file):
    prof = write(tmp_path / "p.json", {"profile": [[[0.5, 0.5]], [[0.5, 0.5]]]})
    assert cli.main(["solve", str(pennies_file), "--profile", str(prof), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "solve.json").read_text())["exploitability"] <= 1e-9

    g = tmp_path / "ii.json"
    cli.main(["generate", "--kind", "identical", "--seed", "0", "--out", str(g)])
    uni = write(tmp_path / "u.json", {"profile": [[[0.5, 0.5]] * 3] * 2})
    assert cli.main(["solve", str(g), "--profile", str(uni), "--out", str(tmp_path / "u")]) == 0
    assert json.loads((tmp_path / "u/solve.json").read_text())["exploitability"] >= 0


def test_solve_wrong_class(tmp_path, capsys):
    g = tmp_path / "ii.json"
    cli.main(["generate", "--kind", "identical", "--seed", "0", "--out", str(g)])
    assert cli.main(["solve", str(g), "--out", str(tmp_path)]) == 1
    assert "zero-sum" in capsys.readouterr().err


def _healthy_run(tmp_path):
    cfg = write(tmp_path / "cfg.json", {
        "game": {"generator": "identical", "params": {"n_players": 3, "seed": 2}},
        "run": {"max_iterations": 400},
    })
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_diagnose_healthy_and_corrupted(tmp_path):
    out = _healthy_run(tmp_path)
    assert cli.main(["diagnose", str(out / "trace.csv")]) == 0
    doc = json.loads((out / "diagnose.json").read_text())
    assert doc["ok"] and doc["telescoping"]["triples"] == 1000
    assert doc["telescoping"]["max_error"] <= 1e-10

    lines = (out / "trace.csv").read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("p0_delta_s1")
    row = lines[5].split(",")
    row[col] = "-0.5"
    lines[5] = ",".join(row)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    code = cli.main(["diagnose", str(bad), "--summary", str(out / "summary.json"),
                     "--out", str(tmp_path / "d")])
    assert code != 0
    doc = json.loads((tmp_path / "d/diagnose.json").read_text())
    assert any(v["check"] == "delta_nonnegative" and v["value"] == -0.5 for v in doc["violations"])


def test_diagnose_missing_columns(tmp_path):
    out = _healthy_run(tmp_path)
    lines = (out / "trace.csv").read_text().splitlines()
    cut = tmp_path / "cut.csv"
    cut.write_text("\n".join(",".join(l.split(",")[1:]) for l in lines) + "\n")
    assert cli.main(["diagnose", str(cut)]) == 1


def test_plot(tmp_path):
    pytest.importorskip("matplotlib")
    out = _healthy_run(tmp_path)
    assert cli.main(["plot", str(out / "trace.csv"), "--out", str(tmp_path / "figs")]) == 0
    assert (tmp_path / "figs/beliefs.png").exists()
    assert (tmp_path / "figs/q_gap.png").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mgfpp", "generate", "--kind", "zero_sum",
                          "--seed", "1"], capture_output=True, text=True, check=True)
    assert json.loads(res.stdout)["n_players"] == 2
