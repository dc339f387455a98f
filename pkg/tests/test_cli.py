import json
import os

import pytest

from ehpskit.cli import main

S5_TABLE = "subject,AGORA,EgoBody,UBody,3DPW,EHF\nS5,119.0,114.2,110.1,110.2,100.5\n"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_schedule_balanced(capsys):
    code, out, _ = run(capsys, "schedule", "--strategy", "balanced", "--sizes", "5,5,5", "--total", "9")
    assert code == 0 and out.strip() == "lengths: 3,3,3"


def test_schedule_weighted_written(capsys, tmp_path):
    dest = tmp_path / "s.json"
    code, out, _ = run(capsys, "schedule", "--strategy", "weighted", "--sizes", "1,1,1,1",
                       "--total", "100", "--out", dest)
    assert code == 0 and out.strip() == "lengths: 40,30,20,10"
    assert json.loads(dest.read_text())["lengths"] == {"d0": 40, "d1": 30, "d2": 20, "d3": 10}


def test_benchmark_table(capsys, tmp_path):
    (tmp_path / "t.csv").write_text(S5_TABLE)
    code, out, _ = run(capsys, "benchmark", "--table", tmp_path / "t.csv", "--format", "csv")
    assert code == 0 and "S5,119.0,110.1,114.2,110.2,100.5,110.8,1" in out


def test_benchmark_trained_on_flag(capsys, tmp_path):
    (tmp_path / "t.csv").write_text(S5_TABLE)
    code, out, _ = run(capsys, "benchmark", "--table", tmp_path / "t.csv", "--format", "csv",
                       "--trained-on", "S5=AGORA")
    assert code == 0 and ",108.8,1" in out
    code, _, err = run(capsys, "benchmark", "--table", tmp_path / "t.csv", "--trained-on", "S5")
    assert code == 2 and "SUBJECT=" in err


def test_unknown_flag_is_usage_error_and_writes_nothing(capsys, tmp_path):
    out = tmp_path / "m.json"
    code, _, _ = run(capsys, "gen-model", "--out", out, "--frobnicate")
    assert code == 2 and not out.exists()
    assert run(capsys, "gen-model")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "evaluate", "--model", "a", "--pred", "b", "--gt", "c", "--out", "d", "--jobs", "0")[0] == 2


def test_missing_and_invalid_input(capsys, tmp_path):
    code, _, err = run(capsys, "report", "--leaderboard", tmp_path / "nope.json")
    assert code == 3 and "invalid input" in err
    (tmp_path / "bad.jsonl").write_text('{"id": 1}\n')
    (tmp_path / "m.json").write_text("{}")
    code, _, _ = run(capsys, "hand-stats", "--model", tmp_path / "m.json", "--data", tmp_path / "bad.jsonl")
    assert code == 3


def test_training_failure_exit_code(capsys, tmp_path):
    g, n = tmp_path / "g.json", tmp_path / "n.json"
    assert run(capsys, "gen-model", "--vertices", 32, "--joints", 8, "--layout", "minimal", "--out", n)[0] == 0
    assert run(capsys, "gen-model", "--variant-of", n, "--seed", 3, "--out", g)[0] == 0
    code, _, err = run(capsys, "train-adapter", "--gendered", g, "--neutral", n, "--steps", 3,
                       "--batch-size", 4, "--step-size", "1e308", "--out", tmp_path / "c.json")
    assert code == 4 and "training failed" in err
    assert not (tmp_path / "c.json").exists()


def test_train_and_eval_adapter(capsys, tmp_path):
    g, n, ck = tmp_path / "g.json", tmp_path / "n.json", tmp_path / "c.json"
    run(capsys, "gen-model", "--vertices", 32, "--joints", 8, "--layout", "minimal", "--out", n)
    run(capsys, "gen-model", "--variant-of", n, "--seed", 3, "--out", g)
    code, out, _ = run(capsys, "train-adapter", "--gendered", g, "--neutral", n, "--steps", 30,
                       "--batch-size", 16, "--eval-size", 20, "--out", ck)
    assert code == 0 and "held-out error" in out
    held = float(out.split("held-out error:")[1].split()[0])
    code, out, _ = run(capsys, "eval-adapter", "--gendered", g, "--neutral", n, "--eval-size", 20, "--checkpoint", ck)
    assert code == 0 and float(out) == pytest.approx(held, abs=1e-3)


def test_seed_env_fallback(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("EHPS_SEED", "17")
    run(capsys, "gen-data", "--n", 5, "--out", tmp_path / "env.jsonl")
    run(capsys, "gen-data", "--n", 5, "--seed", 17, "--out", tmp_path / "flag.jsonl")
    run(capsys, "gen-data", "--n", 5, "--seed", 0, "--out", tmp_path / "zero.jsonl")
    assert (tmp_path / "env.jsonl").read_bytes() == (tmp_path / "flag.jsonl").read_bytes()
    assert (tmp_path / "env.jsonl").read_bytes() != (tmp_path / "zero.jsonl").read_bytes()
    monkeypatch.setenv("EHPS_SEED", "abc")
    assert run(capsys, "gen-data", "--n", 1, "--out", tmp_path / "x.jsonl")[0] == 2


def test_nm_check(capsys):
    code, out, _ = run(capsys, "nm-check", "--mve", 86.6, "--nmve", 96.2, "--mje", 84.5, "--nmje", 93.9)
    assert code == 0 and "consistent" in out
    code, out, _ = run(capsys, "nm-check", "--mve", 86.6, "--nmve", 96.2, "--mje", 84.5, "--nmje", 99.0)
    assert code == 3 and "INCONSISTENT" in out


def test_hand_stats_ranks(capsys, tmp_path):
    model = tmp_path / "m.json"
    run(capsys, "gen-model", "--vertices", 160, "--out", model)
    paths = []
    for level in ("low", "high"):
        p = tmp_path / f"{level}.json"
        run(capsys, "gen-data", "--n", 30, "--hand-complexity", level, "--dataset-id", level, "--out", p)
        paths.append(f"{level}={p}")
    code, out, _ = run(capsys, "hand-stats", "--model", model, "--data", *paths, "--csv", tmp_path / "h.csv")
    assert code == 0
    assert [line.split("\t")[1] for line in out.splitlines()] == ["high", "low"]
    assert os.path.getsize(tmp_path / "h.csv") > 0


def test_forward_and_select_topk(capsys, tmp_path):
    model, data = tmp_path / "m.json", tmp_path / "d.jsonl"
    run(capsys, "gen-model", "--vertices", 120, "--out", model)
    run(capsys, "gen-data", "--n", 2, "--out", data)
    assert run(capsys, "forward", "--model", model, "--data", data, "--out", tmp_path / "f.json")[0] == 0
    assert len(json.loads((tmp_path / "f.json").read_text())["meshes"]) == 2
    (tmp_path / "t.csv").write_text(S5_TABLE + "S6,1,1,1,1,1\n")
    run(capsys, "benchmark", "--table", tmp_path / "t.csv", "--out", tmp_path / "lb.json")
    code, out, _ = run(capsys, "select-topk", "--leaderboard", tmp_path / "lb.json", "-k", 1)
    assert code == 0 and out == "S6\n"
    code, out, _ = run(capsys, "select-topk", "--leaderboard", tmp_path / "lb.json", "-k", 1, "--bottom")
    assert out == "S5\n"
    code, out, _ = run(capsys, "rank", "--leaderboard", tmp_path / "lb.json")
    assert out.splitlines()[0] == "1\tS6\t1.0"
