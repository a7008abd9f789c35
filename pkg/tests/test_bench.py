import json
from dataclasses import replace

import numpy as np
import pytest

from gridseek.bench import (
    ConfigError,
    EpisodeResult,
    ExperimentConfig,
    RewardSpec,
    SceneSpec,
    ScheduleSpec,
    default_benchmark_config,
    run_episode,
    run_suite,
    success_rate,
    write_suite_csv,
)
from gridseek.env import load_scene
from gridseek.policy import PolicyConfig


def tiny_cfg(**overrides):
    base = ExperimentConfig(
        scene=SceneSpec(kind="blobs", rows=6, cols=6, components=3,
                        blobs_per_component=1, radius=1.4, layout_seed=2),
        schedule=ScheduleSpec(steps=30),
        budget=6,
        particles=3,
        seeds=[1, 2],
    )
    return replace(base, **overrides)


def file_scene_cfg(tmp_path, rows=6, cols=6, p_target=12, **overrides):
    rng = np.random.default_rng(0)
    grid = rng.uniform(0.0, 0.4, (rows, cols))
    flat_targets = rng.choice(rows * cols, size=p_target, replace=False)
    grid.ravel()[flat_targets] = rng.uniform(0.8, 1.0, p_target)
    lines = "\n".join(",".join(repr(float(v)) for v in row) for row in grid)
    (tmp_path / "scene.csv").write_text(lines + "\n")
    y = np.zeros((rows, cols))
    y.ravel()[flat_targets] = 1.0
    tlines = "\n".join(",".join(repr(float(v)) for v in row) for row in y)
    (tmp_path / "scene.target.csv").write_text(tlines + "\n")

    from gridseek.diffusion import GaussianMixturePrior

    prior = GaussianMixturePrior.single(grid.ravel(), 0.01)
    prior.to_json(tmp_path / "prior.json")
    base = tiny_cfg(
        scene=SceneSpec(kind="file", path=str(tmp_path / "scene.csv")),
        prior={"kind": "json", "path": str(tmp_path / "prior.json")},
    )
    return replace(base, **overrides)


def stub_result(y_values, u, budget):
    return EpisodeResult(
        policy="stub", seed=0, budget=budget, u=u, records=[],
        r_total=float(sum(y_values)), wall_time=0.0,
    )


# ------------------------------------------------------------ success rate


def test_sr_worked_example_partial():
    res = stub_result([0.5, 1.0], u=3, budget=2)
    assert success_rate([res], B=2) == pytest.approx(0.75)


def test_sr_worked_example_full():
    res = stub_result([1.0, 1.0, 0.0], u=2, budget=3)
    assert success_rate([res], B=3) == pytest.approx(1.0)


def test_sr_mean_over_tasks():
    a = stub_result([0.8], u=2, budget=2)   # 0.8 / 2 = 0.4
    b = stub_result([1.6], u=2, budget=2)   # 1.6 / 2 = 0.8
    assert success_rate([a, b], B=2) == pytest.approx(0.6)


def test_sr_empty_results_error():
    with pytest.raises(ValueError):
        success_rate([], B=2)


def test_sr_bounds_random_runs():
    rng = np.random.default_rng(0)
    results = []
    for _ in range(20):
        u = int(rng.integers(1, 8))
        budget = int(rng.integers(1, 8))
        denom = min(budget, u)
        ys = rng.uniform(0, 1, budget)
        ys = ys * denom / max(ys.sum(), denom)  # keep the collectable bound
        results.append(stub_result(ys, u=u, budget=budget))
    assert 0.0 <= success_rate(results, B=4) <= 1.0


# ------------------------------------------------------------ run_episode


def test_exhaustive_budget_collects_everything():
    cfg = tiny_cfg(budget=36, schedule=ScheduleSpec(steps=40))
    res = run_episode(cfg, seed=3)
    assert len(res.records) == 36
    assert res.sr_term == pytest.approx(1.0)
    # collected y equals the scene total
    assert res.r_total == pytest.approx(sum(r.y for r in res.records))


def test_record_count_min_budget_candidates():
    cfg = tiny_cfg(budget=40, schedule=ScheduleSpec(steps=40))
    res = run_episode(cfg, seed=3)
    assert len(res.records) == 36  # candidates run out first


def test_same_seed_bit_identical_trace():
    cfg = tiny_cfg()
    a = run_episode(cfg, seed=7)
    b = run_episode(cfg, seed=7)
    assert a.trace_csv() == b.trace_csv()
    assert a.records == b.records


def test_different_seeds_differ():
    cfg = tiny_cfg()
    a = run_episode(cfg, seed=7)
    b = run_episode(cfg, seed=8)
    assert a.trace_csv() != b.trace_csv()


def test_trace_y_matches_ground_truth(tmp_path):
    cfg = file_scene_cfg(tmp_path)
    scene = load_scene(tmp_path / "scene.csv")
    res = run_episode(cfg, seed=5)
    for rec in res.records:
        assert rec.y == pytest.approx(scene.location_y(rec.location))


def test_trace_csv_layout(tmp_path):
    cfg = tiny_cfg()
    res = run_episode(cfg, seed=1)
    out = tmp_path / "trace.csv"
    res.write_trace(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,tau,location,expl,likeli,reward,exploit,combined,y,entropy"
    assert len(lines) == 1 + len(res.records)


def test_random_policy_matches_density_monte_carlo(tmp_path):
    cfg = file_scene_cfg(tmp_path, policy=PolicyConfig(kind="random"))
    p = 12 / 36
    collected = []
    for seed in range(100):
        res = run_episode(cfg, seed=seed)
        collected.extend(r.y for r in res.records)
    n = len(collected)
    se = np.sqrt(p * (1 - p) / n)
    assert abs(np.mean(collected) - p) < 3 * se


def test_locations_never_repeat_within_episode():
    cfg = tiny_cfg(budget=20, schedule=ScheduleSpec(steps=30))
    res = run_episode(cfg, seed=9)
    locs = [r.location for r in res.records]
    assert len(locs) == len(set(locs))


def test_bandit_policies_run_end_to_end():
    for kind in ("ucb", "eps_greedy"):
        cfg = tiny_cfg(policy=PolicyConfig(kind=kind))
        res = run_episode(cfg, seed=2)
        assert len(res.records) == cfg.budget
        assert res.wall_time > 0.0


def test_exact_jacobian_mode_runs():
    cfg = tiny_cfg(jacobian_mode="exact", budget=3,
                   schedule=ScheduleSpec(steps=12))
    res = run_episode(cfg, seed=1)
    assert len(res.records) == 3


def test_block_query_episode():
    cfg = tiny_cfg(
        scene=SceneSpec(kind="blobs", rows=8, cols=8, components=3,
                        blobs_per_component=1, radius=1.6, layout_seed=2,
                        block=2),
        budget=8,
    )
    res = run_episode(cfg, seed=6)
    assert len(res.records) == 8
    locs = [r.location for r in res.records]
    assert all(0 <= q < 16 for q in locs)  # 8x8 grid has 16 2x2 blocks
    assert len(set(locs)) == 8


def test_directory_prior_episode(tmp_path):
    rng = np.random.default_rng(1)
    for name in ("a", "b", "c"):
        grid = rng.uniform(0.0, 1.0, (6, 6))
        lines = "\n".join(",".join(repr(float(v)) for v in row) for row in grid)
        (tmp_path / f"{name}.csv").write_text(lines + "\n")
    scene_csv = tmp_path / "a.csv"
    cfg = tiny_cfg(
        scene=SceneSpec(kind="file", path=str(scene_csv), target="value>0.5"),
        prior={"kind": "dir", "path": str(tmp_path), "variance": 0.01},
        budget=4,
    )
    res = run_episode(cfg, seed=2)
    assert len(res.records) == 4


def test_field_sink_sees_every_measurement():
    cfg = tiny_cfg()
    seen = []
    run_episode(cfg, seed=1, field_sink=lambda t, tau, f: seen.append((t, tau)))
    assert len(seen) == cfg.budget


# ------------------------------------------------------ policy separability


def test_kappa_one_reduces_to_max_ent():
    base = tiny_cfg()
    diff = replace(base, policy=PolicyConfig(kind="diffatd", kappa_override=1.0))
    ment = replace(base, policy=PolicyConfig(kind="max_ent", kappa_override=1.0))
    a = run_episode(diff, seed=4)
    b = run_episode(ment, seed=4)
    assert [r.location for r in a.records] == [r.location for r in b.records]
    assert a.trace_csv() == b.trace_csv()


def test_kappa_zero_reduces_to_greedy_adaptive():
    base = tiny_cfg()
    diff = replace(base, policy=PolicyConfig(kind="diffatd", kappa_override=0.0,
                                             combine_mode="exploit"))
    ga = replace(base, policy=PolicyConfig(kind="greedy_adaptive",
                                           kappa_override=0.0))
    a = run_episode(diff, seed=4)
    b = run_episode(ga, seed=4)
    assert [r.location for r in a.records] == [r.location for r in b.records]
    assert a.trace_csv() == b.trace_csv()


# -------------------------------------------------------------- run_suite


def test_suite_single_config_single_seed():
    cfg = tiny_cfg(seeds=[5])
    rows, failures = run_suite(cfg)
    assert failures == []
    assert len(rows) == 1
    assert rows[0]["std_SR"] == 0.0
    assert rows[0]["n_seeds"] == 1


def test_suite_duplicate_seeds_rejected():
    cfg = tiny_cfg(seeds=[1, 1])
    with pytest.raises(ConfigError):
        run_suite(cfg)


def test_suite_row_accounting():
    cfg = tiny_cfg(seeds=[1, 2, 3, 4, 5], budget=4)
    rows, failures = run_suite(
        cfg, policies=["random", "max_ent", "ucb", "eps_greedy"], budgets=[2, 4]
    )
    assert failures == []
    assert len(rows) == 8
    assert all(r["n_seeds"] == 5 for r in rows)


def test_suite_parallel_matches_serial():
    cfg = tiny_cfg(seeds=[1, 2, 3], budget=4)
    serial, _ = run_suite(cfg, policies=["random", "diffatd"])
    parallel, _ = run_suite(cfg, policies=["random", "diffatd"], jobs=2)

    def metrics(rows):  # wall clock is recorded but excluded from any metric
        return [{k: v for k, v in r.items() if k != "mean_runtime"} for r in rows]

    assert metrics(serial) == metrics(parallel)


def test_suite_partial_failure_report(tmp_path):
    cfg = file_scene_cfg(tmp_path, seeds=[1, 2])
    (tmp_path / "scene.csv").unlink()  # break the scene source
    rows, failures = run_suite(cfg)
    assert rows == []
    assert len(failures) == 2
    assert failures[0][:3] == (cfg.policy.kind, cfg.budget, 1)


def test_suite_csv_output(tmp_path):
    cfg = tiny_cfg(seeds=[1, 2], budget=3)
    rows, _ = run_suite(cfg, policies=["random"])
    out = tmp_path / "suite.csv"
    write_suite_csv(rows, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "policy,B,mean_SR,std_SR,n_seeds,mean_runtime"
    assert len(lines) == 2


# ------------------------------------------------------------ configuration


def test_config_validation_errors_name_keys():
    with pytest.raises(ConfigError, match="budget"):
        tiny_cfg(budget=0).validate()
    with pytest.raises(ConfigError, match="particles"):
        tiny_cfg(particles=1).validate()
    with pytest.raises(ConfigError, match="budget"):
        tiny_cfg(budget=50).validate()  # exceeds steps
    with pytest.raises(ConfigError, match="sigma_x2"):
        tiny_cfg(sigma_x2=0.0).validate()
    with pytest.raises(ConfigError, match="seeds"):
        tiny_cfg(seeds=[]).validate()
    with pytest.raises(ConfigError, match="scene.threshold"):
        tiny_cfg(scene=SceneSpec(kind="blobs", threshold=2.0)).validate()


def test_config_errors_surface_before_computation():
    cfg = tiny_cfg(budget=0)
    with pytest.raises(ConfigError):
        run_episode(cfg, seed=1)


def test_config_json_round_trip(tmp_path):
    cfg = default_benchmark_config()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.from_json(path)
    assert back == cfg


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"budgets": 3}))
    with pytest.raises(ConfigError, match="budgets"):
        ExperimentConfig.from_json(path)
    path.write_text(json.dumps({"scene": {"rows": 4, "colums": 4}}))
    with pytest.raises(ConfigError, match="scene.colums"):
        ExperimentConfig.from_json(path)


def test_config_missing_file():
    with pytest.raises(FileNotFoundError, match="missing.json"):
        ExperimentConfig.from_json("/nowhere/missing.json")


def test_reward_spec_validation():
    with pytest.raises(ConfigError, match="reward.hidden"):
        tiny_cfg(reward=RewardSpec(hidden=())).validate()
    with pytest.raises(ConfigError, match="reward.epochs"):
        tiny_cfg(reward=RewardSpec(epochs=0)).validate()
