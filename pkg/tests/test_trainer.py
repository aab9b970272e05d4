import dataclasses

import numpy as np
import pytest

from conftest import make_dataset
from core.channel import PathLossParams
from core.errors import UsageError
from core.net import init_model
from core.scene_builder import SceneConfig
from core.trainer import (EvalReport, TrainConfig, crossover_fractions, evaluate, median_table,
                          relative_improvement, sample_efficiency_sweep, split_holdout, train)


def quiet(**overrides):
    return TrainConfig(progress=False, seeds=(0,), **overrides)


def zero_model(net_config, feature_config):
    model = init_model(net_config, feature_config, seed=0)
    for param in model.params.values():
        param[...] = 0.0
    return model


def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.lr_at(0) == pytest.approx(1e-4)
    assert cfg.lr_at(10) == pytest.approx(1e-5)
    assert cfg.lr_at(30) == pytest.approx(1e-6)


def test_config_validation():
    assert TrainConfig().validate() == []
    errors = TrainConfig(batch=0, method="mystery", optimizer="rmsprop").validate()
    assert len(errors) == 3


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_learning_rate_leaves_weights(tiny_dataset, net_config, optimizer):
    start = init_model(net_config, tiny_dataset.feature_config, seed=1)
    before = {k: v.copy() for k, v in start.params.items()}
    result = train(1, tiny_dataset, quiet(epochs=2, lr=0.0, optimizer=optimizer, batch=4),
                   model=start)
    for name, value in before.items():
        np.testing.assert_array_equal(result.model.params[name], value)
    assert result.flops > 0


def test_training_reduces_data_loss(tiny_dataset, net_config):
    cfg = quiet(epochs=30, lr=3e-2, optimizer="adam", batch=4, lr_decay_epochs=())
    result = train(1, tiny_dataset, cfg, net_config)
    first = np.mean([b.l_data for b in result.losses[:5]])
    last = np.mean([b.l_data for b in result.losses[-5:]])
    assert last < first


def test_full_batch_descent_loss_never_rises(tiny_dataset, net_config):
    cfg = quiet(epochs=30, lr=1e-3, batch=len(tiny_dataset), lr_decay_epochs=())
    result = train(1, tiny_dataset, cfg, net_config, method="baseline1")
    losses = np.array([b.l_data for b in result.losses])
    moving = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert len(moving) == 26
    assert np.all(np.diff(moving) <= 1e-9 * moving[:-1])
    assert moving[-1] < moving[0]


def test_receiver_count_taken_from_dataset(tiny_dataset, net_config):
    narrow = dataclasses.replace(net_config, n_receivers=4)
    result = train(1, tiny_dataset, quiet(epochs=0), narrow)
    assert result.model.config == dataclasses.replace(net_config, n_receivers=16)


def test_training_is_deterministic(tiny_dataset, net_config):
    cfg = quiet(epochs=2, batch=4)
    a = train(2, tiny_dataset, cfg, net_config, seed=4)
    b = train(2, tiny_dataset, cfg, net_config, seed=4)
    for name, value in a.model.params.items():
        np.testing.assert_array_equal(b.model.params[name], value)


def test_empty_dataset_rejected(tiny_dataset, net_config):
    with pytest.raises(UsageError):
        train(1, tiny_dataset.subset([]), quiet(epochs=1), net_config)


def test_validation_rows_per_epoch(tiny_dataset, net_config):
    val = dataclasses.replace(tiny_dataset.head(4), split="val1")
    result = train(1, tiny_dataset, quiet(epochs=3, batch=6), net_config, val_sets=[val])
    assert [row["epoch"] for row in result.rows] == [0, 1, 2]
    assert {row["split"] for row in result.rows} == {"val1"}
    assert result.rows[-1]["flops"] == result.flops


def test_perfect_prediction_scores_zero(tiny_dataset, net_config, feature_config):
    model = zero_model(net_config, feature_config)
    exact = dataclasses.replace(tiny_dataset, rss=tiny_dataset.r_los.copy())
    report = evaluate(model, exact)
    assert report.mae_dbm == pytest.approx(0.0, abs=1e-12)
    assert report.rmse_dbm == pytest.approx(0.0, abs=1e-12)


def test_constant_bias_scores(tiny_dataset, net_config, feature_config):
    model = zero_model(net_config, feature_config)
    biased = dataclasses.replace(tiny_dataset, rss=tiny_dataset.r_los - 2.0)
    report = evaluate(model, biased)
    assert report.mae_dbm == pytest.approx(2.0)
    assert report.rmse_dbm == pytest.approx(2.0)


def test_mixed_errors_mae_and_rmse(tiny_dataset, net_config, feature_config):
    model = zero_model(net_config, feature_config)
    rss = tiny_dataset.r_los.copy()
    rss[:, :8] -= 3.0
    report = evaluate(model, dataclasses.replace(tiny_dataset, rss=rss))
    assert report.mae_dbm == pytest.approx(1.5)
    assert report.rmse_dbm == pytest.approx(2.1213, abs=1e-4)


def test_path_loss_baseline_is_exact_on_clear_los(feature_config, net_config):
    scene_cfg = SceneConfig(seed=1, grid_nx=4, grid_ny=4, n_vehicles=0, n_reflector_facades=0)
    dataset = make_dataset(scene_cfg, feature_config, PathLossParams(shadow_sigma_db=0.0),
                           n_frames=4)
    assert dataset.los_mask.all()
    result = train(1, dataset, quiet(epochs=1, batch=4), net_config, method="baseline3")
    report = evaluate(result.model, dataset, method="baseline3")
    assert report.mae_los == 0.0
    assert np.isnan(report.mae_nlos)


def test_full_fraction_matches_plain_training(tiny_dataset, net_config):
    cfg = quiet(epochs=2, batch=4)
    val = dataclasses.replace(tiny_dataset.head(5), split="val1")
    rows = sample_efficiency_sweep(1, tiny_dataset, [val], [1.0], ["physics"], [0], cfg,
                                   net_config)
    plain = train(1, tiny_dataset, cfg, net_config, seed=0, method="physics")
    assert len(rows) == 1
    assert rows[0]["mae"] == evaluate(plain.model, val).mae_dbm
    assert rows[0]["flops"] == plain.flops


def test_sweep_rejects_bad_fraction(tiny_dataset, net_config):
    with pytest.raises(UsageError):
        sample_efficiency_sweep(1, tiny_dataset, [], [0.0], ["physics"], [0], quiet(epochs=1),
                                net_config)


def sweep_row(method, seed, fraction, mae):
    return {"bs_id": 1, "method": method, "seed": seed, "fraction": fraction,
            "split": "val1", "mae": mae}


def test_median_over_seeds():
    rows = [sweep_row("physics", s, 0.5, mae) for s, mae in enumerate([3.0, 1.0, 2.0])]
    assert median_table(rows) == {(1, "physics", "val1", 0.5): 2.0}


def test_crossover_fraction():
    rows = [sweep_row("baseline1", 0, 1.0, 2.0),
            sweep_row("baseline1", 0, 0.5, 3.0),
            sweep_row("physics", 0, 0.1, 4.0),
            sweep_row("physics", 0, 0.25, 1.9),
            sweep_row("physics", 0, 0.5, 1.5)]
    assert crossover_fractions(rows) == {(1, "val1"): 0.25}
    assert crossover_fractions(rows[2:3] + rows[:1]) == {(1, "val1"): None}


def test_relative_improvement():
    ours = EvalReport(split="val1", mae_dbm=2.0, rmse_dbm=4.0)
    base = EvalReport(split="val1", mae_dbm=4.0, rmse_dbm=5.0)
    assert relative_improvement(ours, base) == {"mae_pct": 50.0, "rmse_pct": 20.0}


def test_holdout_takes_the_tail(tiny_dataset):
    fit, held = split_holdout(tiny_dataset, 0.1)
    assert (len(fit), len(held)) == (10, 2)
    assert held.split == "holdout"
    np.testing.assert_array_equal(held.frame_ids, tiny_dataset.frame_ids[10:])
    assert np.intersect1d(fit.frame_ids, held.frame_ids).size == 0

    whole, none = split_holdout(tiny_dataset, 0.0)
    assert none is None and len(whole) == len(tiny_dataset)
    with pytest.raises(UsageError):
        split_holdout(tiny_dataset.head(1), 0.4)


def test_lam_defaults_to_the_training_weight():
    assert TrainConfig().lams == (0.5,)
    assert TrainConfig(sweep_lams=(0.0, 1.0)).lams == (0.0, 1.0)
    assert len(TrainConfig(holdout_fraction=0.5, sweep_lams=(-1.0,)).validate()) == 2


def test_sweep_trains_physics_once_per_lam(tiny_dataset, net_config):
    val = dataclasses.replace(tiny_dataset.head(4), split="val1")
    rows = sample_efficiency_sweep(1, tiny_dataset, [val], [0.5, 1.0], ["physics", "baseline1"],
                                   [0], quiet(epochs=1, batch=4), net_config, lams=[0.0, 0.5])
    assert len(rows) == (2 + 1) * 2
    assert sorted({(r["method"], r["lam"]) for r in rows}) == [
        ("baseline1", 0.0), ("physics", 0.0), ("physics", 0.5)]
    with pytest.raises(UsageError):
        sample_efficiency_sweep(1, tiny_dataset, [val], [1.0], ["physics"], [0], quiet(epochs=1),
                                net_config, lams=[-0.5])


def test_crossover_per_lam():
    rows = [dict(sweep_row("baseline1", 0, 1.0, 2.0), lam=0.0),
            dict(sweep_row("physics", 0, 0.25, 1.5), lam=0.1),
            dict(sweep_row("physics", 0, 0.25, 3.0), lam=1.0),
            dict(sweep_row("physics", 0, 0.5, 1.9), lam=1.0)]
    assert crossover_fractions(rows, lam=0.1) == {(1, "val1"): 0.25}
    assert crossover_fractions(rows, lam=1.0) == {(1, "val1"): 0.5}
