import json

import pytest

from gridseek.cli import main


@pytest.fixture
def config_path(tmp_path):
    doc = {
        "scene": {"kind": "blobs", "rows": 6, "cols": 6, "components": 3,
                  "blobs_per_component": 1, "radius": 1.4, "layout_seed": 2},
        "schedule": {"steps": 30},
        "budget": 5,
        "particles": 3,
        "seeds": [1, 2],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_run_happy_path(tmp_path, config_path, capsys):
    out = tmp_path / "ep.csv"
    code = main(["run", "--config", str(config_path), "--seed", "7",
                 "--out", str(out)])
    assert code == 0
    assert out.exists()
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("t,tau,location")
    assert len(lines) == 6
    # progress goes to stderr, machine output to files only
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "episode" in captured.err


def test_run_missing_config_names_path(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "ep.csv")])
    assert code == 1
    assert "nope.json" in capsys.readouterr().err


def test_run_bad_config_key_names_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"particless": 3}))
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "e.csv")])
    assert code == 1
    assert "particless" in capsys.readouterr().err


def test_unknown_flag_rejected(config_path, tmp_path, capsys):
    code = main(["run", "--config", str(config_path), "--out",
                 str(tmp_path / "e.csv"), "--speed", "9"])
    assert code == 1


def test_seed_determines_output_bytes(tmp_path, config_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(config_path), "--seed", "5", "--out", str(a)]) == 0
    assert main(["run", "--config", str(config_path), "--seed", "5", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_policy_and_budget_overrides(tmp_path, config_path):
    out = tmp_path / "ep.csv"
    code = main(["run", "--config", str(config_path), "--seed", "1",
                 "--out", str(out), "--policy", "random", "--budget", "3"])
    assert code == 0
    assert len(out.read_text().strip().splitlines()) == 4


def test_gen_scene_writes_pair(tmp_path, config_path):
    out = tmp_path / "scene.csv"
    code = main(["gen-scene", "--config", str(config_path), "--seed", "3",
                 "--out", str(out)])
    assert code == 0
    assert out.exists()
    assert (tmp_path / "scene.target.csv").exists()


def test_scores_dump(tmp_path, config_path):
    out = tmp_path / "scores.csv"
    code = main(["scores", "--config", str(config_path), "--seed", "1",
                 "--out", str(out), "--step", "0"])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,tau,location,expl,likeli,reward,exploit,combined"
    assert len(lines) == 1 + 36  # all candidates at step 0


def test_run_with_trace_flag(tmp_path, config_path):
    out, trace = tmp_path / "ep.csv", tmp_path / "fields.csv"
    code = main(["run", "--config", str(config_path), "--seed", "1",
                 "--out", str(out), "--trace", str(trace)])
    assert code == 0
    assert trace.exists()
    # 36 + 35 + 34 + 33 + 32 candidate rows over the five measurements
    assert len(trace.read_text().strip().splitlines()) == 1 + 36 + 35 + 34 + 33 + 32


def test_suite_command(tmp_path, config_path):
    doc = json.loads(config_path.read_text())
    doc["policies"] = ["random", "max_ent"]
    doc["budgets"] = [2, 4]
    suite_path = tmp_path / "suite.json"
    suite_path.write_text(json.dumps(doc))
    out = tmp_path / "results.csv"
    code = main(["suite", "--config", str(suite_path), "--out", str(out),
                 "--jobs", "2"])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "policy,B,mean_SR,std_SR,n_seeds,mean_runtime"
    assert len(lines) == 5


def test_validate_passes_on_defaults(capsys):
    code = main(["validate"])
    err = capsys.readouterr().err
    assert code == 0
    assert err.count("PASS") == 4
    assert "FAIL" not in err


def test_invalid_config_value_exit_code(tmp_path, config_path):
    doc = json.loads(config_path.read_text())
    doc["budget"] = 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code = main(["run", "--config", str(bad), "--out", str(tmp_path / "e.csv")])
    assert code == 1
