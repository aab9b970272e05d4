import copy
import json

import pytest

from core.errors import ConfigurationError, DatasetMissingError, UsageError, report_failure
from core.experiment import (THREADS_ENV, ExperimentConfig, OutputLayout, ScenarioSpec, cmd_adapt,
                             cmd_gen, cmd_pac, cmd_sweep, cmd_train, deep_merge,
                             load_snapshot, load_station_splits)
from utils import FileManager

TINY = {
    "schema": 1,
    "base_stations": [{"bs_id": 1, "seed": 101}, {"bs_id": 2, "seed": 102}],
    "splits": {"train": 6, "val1": 8, "val2": 4},
    "frame_dt_s": 0.3,
    "scene": {"grid_nx": 4, "grid_ny": 4, "n_vehicles": 3},
    "features": {"grid_size": 8, "n_points": 4, "max_vehicles": 6},
    "net": {"encoder_hidden": 6, "fused_dim": 8, "head_hidden": 8, "embed_dim": 3},
    "train": {"epochs": 1, "batch": 4, "seeds": [0], "methods": ["physics", "baseline1"],
              "progress": False},
    "adapt": {"epochs": 1, "batch": 4, "samples": 4, "budgets": [2, 4], "progress": False},
    "pac": {"n_cells": 6, "trials": 10, "progress": False},
    "shifts": {
        "val1_buses": {"kind": "bus_blockage", "n_buses": 1},
        "val2_noise": {"kind": "sensor_noise"},
    },
}


def tiny(**changes):
    return deep_merge(TINY, changes)


def test_default_files_load():
    config = ExperimentConfig.load()
    assert [bs.bs_id for bs in config.base_stations] == [1, 2, 3, 4, 5]
    assert config.station(3).scene.n_vehicles == 8
    assert config.train.optimizer == "adam"
    assert config.station(1).shift_for("val2") == "val2_noise"


def test_unknown_top_level_key():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(tiny(render={"fps": 24}))


def test_unknown_section_key():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(tiny(train={"learning_rate": 0.1}))


def test_unknown_shift_reference():
    data = tiny()
    data["base_stations"][0]["split_shifts"] = {"val1": "fog"}
    with pytest.raises(ConfigurationError):
        ExperimentConfig(data)


def test_seed_override():
    config = ExperimentConfig(tiny(), seed=7)
    assert config.train.seeds == (7,)
    assert config.station(1).scene.seed == 108
    assert ExperimentConfig(tiny()).station(1).scene.seed == 101


def test_config_hash_is_stable():
    a, b = ExperimentConfig(tiny()), ExperimentConfig(copy.deepcopy(TINY))
    assert a.config_hash == b.config_hash
    assert ExperimentConfig(tiny(threads=1)).config_hash == a.config_hash
    assert ExperimentConfig(tiny(frame_dt_s=0.5)).config_hash != a.config_hash


def test_worker_count(monkeypatch):
    config = ExperimentConfig(tiny())
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert config.worker_count() == 2
    monkeypatch.setenv(THREADS_ENV, "1")
    assert config.worker_count() == 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigurationError):
        config.worker_count()


def test_deep_merge_replaces_lists():
    merged = deep_merge({"a": {"b": 1, "c": [1, 2]}}, {"a": {"c": [3]}})
    assert merged == {"a": {"b": 1, "c": [3]}}


def test_smoke_scenario_overrides():
    config = ExperimentConfig.load(scenario="smoke")
    assert [bs.bs_id for bs in config.base_stations] == [1, 2]
    assert config.splits == {"train": 24, "val1": 16, "val2": 8}
    assert config.scenario.requesters == (2,)
    assert config.scenario.donors_for(2, [1, 2]) == [1]


def test_scenario_shift_assignments():
    buses = ExperimentConfig.load(scenario="val1-bs45")
    assert buses.station(1).train_shift == "val1_buses"
    assert buses.station(4).train_shift is None

    raised = ExperimentConfig.load(scenario="rx-height-bs1")
    assert raised.station(1).shift_for("val1") == "rx_height_18"
    assert raised.station(2).shift_for("val1") == "val1_buses"
    assert raised.scenario.donors_for(1, [1, 2, 3, 4, 5]) == [2, 3, 4, 5]


def test_unknown_scenario():
    with pytest.raises(UsageError):
        ExperimentConfig.load(scenario="no-such-scenario")


def test_gen_writes_every_split(tmp_path):
    manifest = cmd_gen(ExperimentConfig(tiny()), tmp_path)
    names = sorted(p.name for p in (tmp_path / "data").glob("*.jsonl"))
    assert names == ["bs1_train.jsonl", "bs1_val1.jsonl", "bs1_val2.jsonl",
                     "bs2_train.jsonl", "bs2_val1.jsonl", "bs2_val2.jsonl"]
    assert [f["records"] for f in manifest["files"]] == [6, 8, 4, 6, 8, 4]
    assert (tmp_path / "data" / "manifest.json").exists()


def test_gen_is_byte_identical_across_runs_and_workers(tmp_path, monkeypatch):
    cmd_gen(ExperimentConfig(tiny()), tmp_path / "a")
    monkeypatch.setenv(THREADS_ENV, "1")
    cmd_gen(ExperimentConfig(tiny()), tmp_path / "b")
    for path in sorted((tmp_path / "a" / "data").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / "data" / path.name).read_bytes()


def test_stale_data_is_reported_missing(tmp_path):
    cmd_gen(ExperimentConfig(tiny()), tmp_path)
    changed = ExperimentConfig(tiny(frame_dt_s=0.6))
    with pytest.raises(DatasetMissingError):
        load_station_splits(changed, OutputLayout(tmp_path), 1)


def test_train_without_data_exits_with_code_two(tmp_path, capsys):
    with pytest.raises(DatasetMissingError) as info:
        cmd_train(ExperimentConfig(tiny()), tmp_path)
    assert report_failure(info.value) == 2
    line = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert line["error"] == "dataset_missing"


def test_report_failure_codes(capsys):
    assert report_failure(ConfigurationError("bad")) == 1
    assert report_failure(RuntimeError("boom")) == 1
    lines = [json.loads(l) for l in capsys.readouterr().err.strip().splitlines()]
    assert [l["error"] for l in lines] == ["configuration_error", "internal_error"]


def test_adapt_requires_a_scenario(tmp_path):
    with pytest.raises(UsageError):
        cmd_adapt(ExperimentConfig(tiny()), tmp_path)


def test_pipeline_end_to_end(tmp_path):
    scenario = ScenarioSpec(name="tiny", requesters=(2,), donors=(1,), split="val1")
    config = ExperimentConfig(tiny(), scenario=scenario)
    cmd_gen(config, tmp_path)

    trained = cmd_train(config, tmp_path)
    assert len(trained["final"]) == 2 * 2 * 2
    assert {row["baseline"] for row in trained["improvements"]} == {"baseline1"}
    for name in ("train.csv", "shift_robustness.csv", "relative_improvement.csv"):
        assert (tmp_path / "metrics" / name).exists()
    assert (tmp_path / "models" / "bs1_physics.rsw").exists()
    maps = FileManager.read_json(tmp_path / "plots" / "rss_maps.json")["maps"]
    assert len(maps) == 2
    assert len(maps[0]["true"]) == 4

    adapted = cmd_adapt(config, tmp_path, budgets=[2, 4])
    methods = {row["method"] for row in adapted["rows"]}
    assert methods == {"proposed", "finetune", "finetune_no_phy", "averaged"}
    assert (tmp_path / "metrics" / "adapt_tiny.csv").exists()
    assert (tmp_path / "metrics" / "adapt_budget_tiny.csv").exists()
    curves = FileManager.read_json(tmp_path / "plots" / "adaptation_curves_tiny.json")
    assert curves["scenario"] == "tiny"
    assert curves["summary"][0]["bs_id"] == 2


def test_sweep_writes_crossovers(tmp_path):
    config = ExperimentConfig(tiny())
    cmd_gen(config, tmp_path)
    result = cmd_sweep(config, tmp_path, fractions=(0.5, 1.0))
    assert len(result["rows"]) == 2 * 2 * 2 * 2
    plot = FileManager.read_json(tmp_path / "plots" / "sample_efficiency.json")
    assert len(plot["crossovers"]) == 4


def test_pac_writes_verification(tmp_path):
    result = cmd_pac(ExperimentConfig(tiny()), tmp_path, random_configs=2)
    assert len(result["random_configs"]) == 2
    saved = FileManager.read_json(tmp_path / "pac" / "verification.json")
    assert saved["verification"]["class_size"] == 64


def test_snapshots_carry_a_held_out_reference(tmp_path):
    config = ExperimentConfig(tiny())
    cmd_gen(config, tmp_path)
    cmd_train(config, tmp_path)
    meta = load_snapshot(OutputLayout(tmp_path), 1, "physics", config.config_hash).metadata
    assert meta["val_rmse"] > 0
    assert meta["feature_stats"]["count"] == 5


def test_budget_beyond_the_shifted_split_is_rejected(tmp_path):
    scenario = ScenarioSpec(name="tiny", requesters=(2,), donors=(1,), split="val1")
    config = ExperimentConfig(tiny(), scenario=scenario)
    cmd_gen(config, tmp_path)
    cmd_train(config, tmp_path)
    with pytest.raises(UsageError):
        cmd_adapt(config, tmp_path, budgets=[2, 8])


def test_sweep_series_per_lam(tmp_path):
    config = ExperimentConfig(tiny())
    cmd_gen(config, tmp_path)
    result = cmd_sweep(config, tmp_path, fractions=(1.0,), lams=(0.0, 0.5))
    assert len(result["rows"]) == 2 * 3 * 2
    assert sorted({c["lam"] for c in result["crossovers"]}) == [0.0, 0.5]
    plot = FileManager.read_json(tmp_path / "plots" / "sample_efficiency.json")
    labels = {s["label"] for s in plot["series"]}
    assert "BS 1 physics lam=0.5 val1" in labels
    assert "BS 1 physics lam=0 val1" in labels
    assert "BS 1 baseline1 val1" in labels


def test_smoke_scenario_is_byte_reproducible(tmp_path):
    for run in ("a", "b"):
        config = ExperimentConfig.load(scenario="smoke")
        cmd_gen(config, tmp_path / run)
        cmd_train(config, tmp_path / run)
        cmd_adapt(config, tmp_path / run, budgets=[4, 6])

    for folder in ("metrics", "models"):
        produced = sorted((tmp_path / "a" / folder).iterdir())
        assert produced
        for path in produced:
            twin = tmp_path / "b" / folder / path.name
            assert path.read_bytes() == twin.read_bytes(), path.name
    assert sorted(p.name for p in (tmp_path / "a" / "models").iterdir()) == [
        f"bs{b}_{m}.rsw" for b in (1, 2) for m in ("baseline1", "baseline2", "baseline3", "physics")]
