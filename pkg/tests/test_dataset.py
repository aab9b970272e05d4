import numpy as np
import pytest

from core.dataset import (RssDataset, generate_frames, load_split, make_record, split_path,
                          write_split)
from core.errors import DatasetMissingError, UsageError
from core.scene_builder import ShiftProfile, generate_scene


@pytest.fixture
def frames(scene_config, feature_config, pathloss):
    return list(generate_frames(generate_scene(scene_config), 5, 0.3, 2, pathloss, feature_config))


def test_record_layout(frames, feature_config):
    record = make_record(frames[0], 3, "val1", "abc")
    assert record["bs_id"] == 3
    assert record["split"] == "val1"
    assert record["config_hash"] == "abc"
    assert len(record["features"]) == feature_config.vector_size
    assert len(record["rss_dbm"]) == 16
    assert set(record["los_mask"]) <= {0, 1}


def test_records_decompose_exactly(frames):
    for frame in frames:
        record = make_record(frame, 1, "train", "")
        rebuilt = (np.array(record["r_los_dbm"]) + np.array(record["r_reflection_db"])
                   - np.array(record["r_blockage_db"]))
        np.testing.assert_allclose(record["rss_dbm"], rebuilt, atol=1e-9, rtol=0)


def test_frame_ids_and_motion(frames):
    assert [f.frame_id for f in frames] == list(range(5))
    assert frames[0].scene != frames[-1].scene


def test_write_then_load(tmp_path, frames, feature_config):
    path, count = write_split(tmp_path, 2, "train", frames, "h1")
    assert path == split_path(tmp_path, 2, "train")
    assert path.name == "bs2_train.jsonl"
    assert count == 5

    dataset = load_split(tmp_path, 2, "train", feature_config, config_hash="h1")
    assert len(dataset) == 5
    assert dataset.bs_id == 2
    np.testing.assert_array_equal(dataset.rss[3], frames[3].rss.rss_dbm)
    np.testing.assert_array_equal(dataset.los_mask[3], frames[3].rss.los_mask)


def test_missing_split(tmp_path, feature_config):
    with pytest.raises(DatasetMissingError) as info:
        load_split(tmp_path, 1, "val2", feature_config)
    assert "run gen first" in str(info.value)


def test_stale_split(tmp_path, frames, feature_config):
    write_split(tmp_path, 1, "train", frames, "old")
    with pytest.raises(DatasetMissingError):
        load_split(tmp_path, 1, "train", feature_config, config_hash="new")


def test_empty_records(feature_config):
    dataset = RssDataset.from_records([], feature_config)
    assert len(dataset) == 0


def test_nested_prefixes(tiny_dataset):
    quarter = tiny_dataset.nested_prefix(0.25, seed=5)
    half = tiny_dataset.nested_prefix(0.5, seed=5)
    assert len(quarter) == 3
    assert len(half) == 6
    assert set(quarter.frame_ids) <= set(half.frame_ids)
    assert len(tiny_dataset.nested_prefix(1.0, seed=5)) == len(tiny_dataset)
    with pytest.raises(UsageError):
        tiny_dataset.nested_prefix(0.0, seed=5)


def test_covariate_profile_keeps_labels(scene_config, feature_config, pathloss):
    scene = generate_scene(scene_config)
    clean = list(generate_frames(scene, 4, 0.3, 9, pathloss, feature_config))
    noisy = list(generate_frames(scene, 4, 0.3, 9, pathloss, feature_config,
                                 ShiftProfile(kind="sensor_noise")))
    for a, b in zip(clean, noisy):
        np.testing.assert_array_equal(a.rss.rss_dbm, b.rss.rss_dbm)
    assert not np.array_equal(clean[1].features.to_vector(), noisy[1].features.to_vector())


def test_rx_height_profile_moves_receivers(scene_config, feature_config, pathloss):
    shifted = list(generate_frames(generate_scene(scene_config), 3, 0.3, 9, pathloss,
                                   feature_config, ShiftProfile(kind="rx_height")))
    for frame in shifted:
        assert all(r[2] == 1.8 for r in frame.scene.receivers)
