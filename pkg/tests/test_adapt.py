import json

import numpy as np
import pytest

import core.adapt as adapt_module
from conftest import make_dataset
from core.adapt import (ADAPT_METHODS, AdaptConfig, AggregationWeights, Donor, FeatureStats,
                        ShiftDetector, adaptation_budget_sweep, aggregate, average_snapshots,
                        collaborative_adapt, collect_feature_stats, efficiency_summary,
                        holdout_split, run_adaptation_comparison, similarity_weights,
                        update_stats, w2_distance)
from core.errors import ContractError, UsageError
from core.net import NetConfig, init_model, snapshot
from core.scene_builder import ShiftProfile
from core.trainer import TrainConfig, evaluate, train


def stats_of(samples):
    return update_stats(FeatureStats.empty(np.shape(samples)[1]), samples)


def constant_snapshot(net_config, feature_config, value):
    model = init_model(net_config, feature_config, seed=0)
    for param in model.params.values():
        param[...] = value
    return snapshot(model)


@pytest.fixture
def donors(tiny_dataset, net_config, feature_config):
    return [Donor.from_model(k, init_model(net_config, feature_config, seed=10 + k), tiny_dataset)
            for k in (1, 2, 3)]


@pytest.fixture
def shifted(scene_config, feature_config, pathloss):
    return make_dataset(scene_config, feature_config, pathloss, n_frames=10, seed=29, bs_id=4)


def quiet(**overrides):
    defaults = dict(epochs=2, batch=4, samples=6, progress=False)
    defaults.update(overrides)
    return AdaptConfig(**defaults)


def test_constant_batch_statistics():
    stats = stats_of(np.tile([1.0, -2.0, 3.5], (10, 1)))
    np.testing.assert_array_equal(stats.mu, [1.0, -2.0, 3.5])
    np.testing.assert_array_equal(stats.sigma_diag, [0.0, 0.0, 0.0])
    assert stats.count == 10


def test_streaming_matches_two_pass():
    rng = np.random.default_rng(0)
    samples = rng.normal(3.0, 2.0, size=(1000, 5))
    stats = FeatureStats.empty(5)
    start = 0
    for size in rng.integers(1, 60, size=100):
        if start >= len(samples):
            break
        stats = update_stats(stats, samples[start:start + size])
        start += size
    stats = update_stats(stats, samples[start:]) if start < len(samples) else stats
    assert stats.count == 1000
    np.testing.assert_allclose(stats.mu, samples.mean(axis=0), atol=1e-9, rtol=0)
    np.testing.assert_allclose(stats.sigma_diag, samples.var(axis=0), atol=1e-9, rtol=0)


def test_merge_equals_concatenation():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(40, 3)), rng.normal(1.0, 3.0, size=(25, 3))
    merged = stats_of(a).merge(stats_of(b))
    joint = stats_of(np.vstack([a, b]))
    np.testing.assert_allclose(merged.mu, joint.mu, atol=1e-12)
    np.testing.assert_allclose(merged.sigma_diag, joint.sigma_diag, atol=1e-12)


def test_empty_batch_rejected():
    with pytest.raises(UsageError):
        update_stats(FeatureStats.empty(3), np.zeros((0, 3)))


def test_w2_of_identical_stats_is_zero():
    stats = FeatureStats.from_moments([1.0, 2.0], [0.5, 3.0], count=100)
    assert w2_distance(stats, stats) == 0.0


def test_w2_mean_shift_example():
    a = FeatureStats.from_moments([0.0, 0.0], [1.0, 1.0], count=10)
    b = FeatureStats.from_moments([1.0, 1.0], [1.0, 1.0], count=10)
    assert w2_distance(a, b) == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_w2_spread_difference():
    a = FeatureStats.from_moments([0.0], [1.0], count=10)
    b = FeatureStats.from_moments([0.0], [4.0], count=10)
    assert w2_distance(a, b) == pytest.approx(1.0)


def test_w2_mean_and_spread_together():
    a = FeatureStats.from_moments([0.0], [1.0], count=10)
    b = FeatureStats.from_moments([1.0], [4.0], count=10)
    assert abs(w2_distance(a, b) - np.sqrt(2.0)) < 1e-12


def test_w2_is_a_metric():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        a, b, c = (FeatureStats.from_moments(rng.normal(size=4), rng.uniform(0, 3, 4), 50)
                   for _ in range(3))
        assert w2_distance(a, b) == w2_distance(b, a)
        assert w2_distance(a, c) <= w2_distance(a, b) + w2_distance(b, c) + 1e-12


def test_w2_contract_errors():
    a = FeatureStats.from_moments([0.0, 0.0], [1.0, 1.0], count=10)
    with pytest.raises(ContractError):
        w2_distance(a, FeatureStats.from_moments([0.0], [1.0], count=10))
    with pytest.raises(ContractError):
        w2_distance(a, FeatureStats.from_moments([0.0, 0.0], [1.0, 1.0], count=1))
    with pytest.raises(ContractError):
        w2_distance(a, FeatureStats.from_moments([0.0, 0.0], [-1.0, 1.0], count=10))


def test_equal_distances_give_uniform_weights():
    weights = similarity_weights([0.7, 0.7, 0.7, 0.7])
    np.testing.assert_array_equal(weights.gamma, np.full(4, 0.25))
    assert len(weights) == 4


def test_two_donor_weight_example():
    gamma = similarity_weights([1.0, 2.0]).gamma
    assert gamma == pytest.approx([0.6225, 0.3775], abs=1e-4)
    assert gamma.sum() == pytest.approx(1.0)


def test_closer_donors_weigh_more():
    rng = np.random.default_rng(3)
    distances = rng.uniform(0.5, 5.0, size=6)
    gamma = similarity_weights(distances).gamma
    order = np.argsort(distances)
    assert np.all(np.diff(gamma[order]) <= 0)
    scaled = similarity_weights(distances * 3.0).gamma
    np.testing.assert_array_equal(np.argsort(-scaled), np.argsort(-gamma))


def test_zero_distance_is_floored():
    gamma = similarity_weights([0.0, 1.0]).gamma
    assert np.isfinite(gamma).all()
    assert gamma[0] == pytest.approx(1.0)
    np.testing.assert_array_equal(similarity_weights([0.0, 0.0]).gamma, [0.5, 0.5])


def test_weight_input_errors():
    with pytest.raises(UsageError):
        similarity_weights([])
    with pytest.raises(ContractError):
        similarity_weights([1.0, -0.1])


def test_gamma_serialises():
    assert json.loads(AggregationWeights(np.array([0.25, 0.75])).to_json()) == [0.25, 0.75]


def test_uniform_aggregate_is_the_average(net_config, feature_config):
    snaps = [snapshot(init_model(net_config, feature_config, seed=s)) for s in range(3)]
    uniform = aggregate(snaps, similarity_weights([2.0, 2.0, 2.0]))
    averaged = average_snapshots(snaps)
    for name, value in averaged.params.items():
        np.testing.assert_array_equal(uniform.params[name], value)


def test_one_hot_aggregate_copies_donor(net_config, feature_config):
    snaps = [snapshot(init_model(net_config, feature_config, seed=s)) for s in range(3)]
    model = aggregate(snaps, [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(snapshot(model).vector, snaps[1].vector)


def test_weighted_aggregate_values(net_config, feature_config):
    snaps = [constant_snapshot(net_config, feature_config, 1.0),
             constant_snapshot(net_config, feature_config, 3.0)]
    model = aggregate(snaps, [0.25, 0.75])
    np.testing.assert_allclose(snapshot(model).vector, 2.5)


def test_aggregate_rejects_mixed_architectures(net_config, feature_config):
    other = NetConfig(n_receivers=16, encoder_hidden=5, fused_dim=8, head_hidden=8, embed_dim=3)
    snaps = [snapshot(init_model(net_config, feature_config, seed=0)),
             snapshot(init_model(other, feature_config, seed=0))]
    with pytest.raises(ContractError):
        aggregate(snaps, [0.5, 0.5])
    with pytest.raises(ContractError):
        aggregate(snaps[:1], [0.5, 0.5])


def test_donor_carries_home_statistics(donors, tiny_dataset):
    stats = donors[0].stats
    assert stats.count == len(tiny_dataset)
    assert stats.dim == donors[0].snapshot.net_config.fused_dim
    recomputed = collect_feature_stats(
        init_model(donors[0].snapshot.net_config, tiny_dataset.feature_config, seed=11),
        tiny_dataset)
    np.testing.assert_allclose(stats.mu, recomputed.mu)


def test_zero_epochs_returns_the_aggregate(donors, shifted):
    model, report = collaborative_adapt(4, shifted, donors, quiet(epochs=0))
    expected = aggregate([d.snapshot for d in donors], report.gamma)
    for name, value in expected.params.items():
        np.testing.assert_array_equal(model.params[name], value)
    assert report.donor_ids == (1, 2, 3)
    assert sum(report.gamma) == pytest.approx(1.0)
    assert report.bytes_exchanged == sum(d.snapshot.nbytes for d in donors)
    assert len(report.rows) == 1
    assert report.rows[0]["flops"] > 0


def test_no_donors_falls_back_to_finetuning(shifted, net_config, feature_config):
    own = snapshot(init_model(net_config, feature_config, seed=7))
    model, report = collaborative_adapt(4, shifted, [], quiet(), requester=own)
    assert report.gamma == ()
    assert report.bytes_exchanged == 0
    assert [row["epoch"] for row in report.rows] == [0, 1, 2]
    with pytest.raises(UsageError):
        collaborative_adapt(4, shifted, [], quiet())


def test_budget_needs_two_frames(donors, shifted):
    with pytest.raises(UsageError):
        collaborative_adapt(4, shifted, donors, quiet(), samples=1)


def test_comparison_runs_every_method(donors, shifted, net_config, feature_config):
    own = snapshot(init_model(net_config, feature_config, seed=7))
    eval_set = shifted.subset(range(6, 10))
    reports = run_adaptation_comparison(4, own, donors, shifted.head(6), quiet(),
                                        eval_data=eval_set)
    assert set(reports) == set(ADAPT_METHODS)
    for method, report in reports.items():
        assert [row["samples_used"] for row in report.rows] == [0, 6, 12]
        assert all(row["method"] == method for row in report.rows)
    assert reports["finetune"].bytes_exchanged == 0
    assert reports["averaged"].gamma == pytest.approx((1 / 3, 1 / 3, 1 / 3))
    assert reports["proposed"].total_flops > reports["finetune"].total_flops

    summary = efficiency_summary(reports)
    assert summary["bs_id"] == 4
    assert summary["target_rmse"] == reports["finetune"].final_rmse
    assert "averaged_beats_proposed" in summary


def test_budget_sweep_rows(donors, shifted, net_config, feature_config):
    own = snapshot(init_model(net_config, feature_config, seed=7))
    rows, crossover = adaptation_budget_sweep(4, own, donors, shifted, quiet(epochs=1),
                                              budgets=[4, 2])
    assert [row["budget"] for row in rows[:4]] == [2, 2, 2, 2]
    assert len(rows) == 2 * len(ADAPT_METHODS)
    assert crossover in (None, 2, 4)


def test_budget_sweep_scores_frames_no_budget_adapts_on(donors, shifted, net_config,
                                                        feature_config, monkeypatch):
    seen = []
    real = adapt_module.run_adaptation_comparison

    def recording(bs_id, requester, donors, shifted_data, acfg, eval_data, samples):
        seen.append((samples, shifted_data.head(samples).frame_ids, eval_data.frame_ids))
        return real(bs_id, requester, donors, shifted_data, acfg, eval_data, samples)

    monkeypatch.setattr(adapt_module, "run_adaptation_comparison", recording)
    own = snapshot(init_model(net_config, feature_config, seed=7))
    adaptation_budget_sweep(4, own, donors, shifted, quiet(epochs=0), budgets=[6, 2, 4])

    assert [budget for budget, _, _ in seen] == [2, 4, 6]
    np.testing.assert_array_equal(seen[0][2], shifted.frame_ids[6:])
    for _, used, scored in seen:
        assert np.intersect1d(used, scored).size == 0
        np.testing.assert_array_equal(scored, seen[0][2])


def test_holdout_split_keeps_a_disjoint_tail(shifted):
    for budget in (2, 4, 6, 9):
        pool, scored = holdout_split(shifted, budget)
        assert len(pool) == budget
        assert len(pool) + len(scored) == len(shifted)
        assert np.intersect1d(pool.frame_ids, scored.frame_ids).size == 0
    with pytest.raises(UsageError):
        holdout_split(shifted, len(shifted))


def test_budget_larger_than_the_split_is_rejected(donors, shifted, net_config, feature_config):
    own = snapshot(init_model(net_config, feature_config, seed=7))
    with pytest.raises(UsageError):
        adaptation_budget_sweep(4, own, donors, shifted, quiet(epochs=0), budgets=[2, 10])


def test_scoring_on_adaptation_frames_is_refused(donors, shifted):
    with pytest.raises(ContractError):
        collaborative_adapt(4, shifted, donors, quiet(epochs=0), eval_data=shifted)
    with pytest.raises(ContractError):
        collaborative_adapt(4, shifted, donors, quiet(epochs=0), eval_data=shifted.subset([5, 8]))
    collaborative_adapt(4, shifted, donors, quiet(epochs=0), eval_data=shifted.subset([6, 8]))


def test_adaptation_beats_the_unadapted_requester(scene_config, feature_config, pathloss,
                                                  net_config, tiny_dataset):
    buses = ShiftProfile(kind="bus_blockage", n_buses=3)
    recipe = TrainConfig(epochs=30, lr=3e-2, batch=4, lr_decay_epochs=(), seeds=(0,),
                         progress=False)
    start = init_model(net_config, feature_config, seed=5)
    requester = train(4, tiny_dataset, recipe, model=start.copy()).model

    donors = []
    for bs_id, seed in ((1, 41), (2, 43)):
        home = make_dataset(scene_config, feature_config, pathloss, n_frames=16, seed=seed,
                            shift=buses, bs_id=bs_id)
        trained = train(bs_id, home, recipe, model=start.copy()).model
        donors.append(Donor.from_model(bs_id, trained, home))

    arriving = make_dataset(scene_config, feature_config, pathloss, n_frames=14, seed=47,
                            shift=buses, split="val1", bs_id=4)
    pool, scored = holdout_split(arriving, 6)
    before = evaluate(requester, scored).rmse_dbm

    adapted, report = collaborative_adapt(4, pool, donors, quiet(epochs=10, lr=1e-2),
                                          requester=snapshot(requester), eval_data=scored)
    after = evaluate(adapted, scored).rmse_dbm
    assert after <= before
    assert report.final_rmse == pytest.approx(after)


def test_shift_detector_rolling_window():
    detector = ShiftDetector(reference_rmse=1.0, factor=1.5, window=3)
    truth = np.zeros(4)
    assert not detector.observe(truth + 2.0, truth)
    assert not detector.observe(truth + 2.0, truth)
    assert detector.observe(truth + 2.0, truth)
    assert detector.rolling_rmse == pytest.approx(2.0)

    calm = ShiftDetector(reference_rmse=1.0, factor=1.5, window=2)
    calm.observe(truth + 1.0, truth)
    assert not calm.observe(truth + 1.0, truth)


def test_forced_detector_fires_immediately():
    assert ShiftDetector(reference_rmse=1.0, force=True).triggered
    with pytest.raises(UsageError):
        ShiftDetector(reference_rmse=0.0)


def test_adapt_config_validation():
    assert AdaptConfig().validate() == []
    assert len(AdaptConfig(samples=1, budgets=(1, 4), eps=0.0).validate()) == 3
