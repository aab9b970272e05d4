import dataclasses

import numpy as np
import pytest

from core.errors import ContractError, UsageError
from core.features import (FeatureBlock, FeatureConfig, apply_covariate_shift, extract_features,
                           farthest_point_order, inputs_from_vectors, stack_inputs)
from core.scene_builder import Blocker, DomainShiftSpec, SceneConfig, generate_scene

VAL2_NOISE = DomainShiftSpec(kind="covariate_noise", lidar_noise_std=0.25, radar_noise_std=1.0,
                             gps_noise_std=0.5, brightness_scale=0.75)


def scene_with(*blockers, **cfg):
    scene = generate_scene(SceneConfig(n_vehicles=0, **cfg))
    return dataclasses.replace(scene, blockers=tuple(blockers))


def test_empty_scene_features():
    fb = extract_features(scene_with(), FeatureConfig())
    assert not fb.occupancy.any()
    assert not fb.points.any()
    assert not fb.gps.any()
    assert fb.brightness == pytest.approx(np.full((16, 16), 0.25))


def test_footprint_rasterization():
    # 16x16 grid over 80 x 40 m: cells are 5 m by 2.5 m, y starts at -20
    box = Blocker(center=(17.5, -10.0, 0.75), extent=(4.0, 4.0, 1.5))
    fb = extract_features(scene_with(box), FeatureConfig())
    expected = np.zeros((16, 16))
    expected[3, 3:5] = 1.0
    np.testing.assert_array_equal(fb.occupancy, expected)
    assert fb.brightness[3, 3] > fb.brightness[0, 0]


def test_point_subsample_has_exact_size():
    fcfg = FeatureConfig(n_points=4)
    scene = generate_scene(SceneConfig(seed=5, n_vehicles=10))
    fb = extract_features(scene, fcfg)
    assert fb.points.shape == (4, 4)
    assert fb.n_points_valid == 4
    assert fb.n_gps_valid == 10


def test_farthest_point_order_spreads_out():
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [5.0, 0.0]])
    assert farthest_point_order(xy, 2) == [0, 2]
    assert farthest_point_order(xy, 3) == [0, 2, 3]
    assert farthest_point_order(xy, 9) == [0, 1, 2, 3]


def test_vector_layout_roundtrip():
    fcfg = FeatureConfig()
    fb = extract_features(generate_scene(SceneConfig(seed=2)), fcfg)
    vector = fb.to_vector()
    assert vector.shape == (fcfg.vector_size,)
    back = FeatureBlock.from_vector(vector, fcfg)
    np.testing.assert_array_equal(back.points, fb.points)
    with pytest.raises(ContractError):
        FeatureBlock.from_vector(vector[:-1], fcfg)


def test_identity_covariate_shift():
    fb = extract_features(generate_scene(SceneConfig(seed=2)), FeatureConfig())
    same = apply_covariate_shift(fb, DomainShiftSpec(kind="covariate_noise"), seed=1)
    np.testing.assert_array_equal(same.to_vector(), fb.to_vector())


def test_val2_noise_perturbs_only_valid_rows():
    fcfg = FeatureConfig(max_vehicles=16)
    fb = extract_features(generate_scene(SceneConfig(seed=2, n_vehicles=6)), fcfg)
    noisy = apply_covariate_shift(fb, VAL2_NOISE, seed=4)

    assert not np.array_equal(noisy.points, fb.points)
    assert not noisy.gps[6:].any()
    assert set(np.unique(noisy.occupancy)) <= {0.0, 1.0}
    np.testing.assert_allclose(noisy.brightness, fb.brightness * 0.75)


def test_covariate_shift_is_deterministic():
    fb = extract_features(generate_scene(SceneConfig(seed=2)), FeatureConfig())
    a = apply_covariate_shift(fb, VAL2_NOISE, seed=9)
    b = apply_covariate_shift(fb, VAL2_NOISE, seed=9)
    np.testing.assert_array_equal(a.to_vector(), b.to_vector())


def test_concept_spec_rejected():
    fb = extract_features(generate_scene(SceneConfig(seed=2)), FeatureConfig())
    with pytest.raises(UsageError):
        apply_covariate_shift(fb, DomainShiftSpec(kind="concept_rx_height", rx_height_m=1.8), seed=0)


def test_vector_inputs_match_block_inputs():
    fcfg = FeatureConfig()
    blocks = [extract_features(generate_scene(SceneConfig(seed=s)), fcfg) for s in range(3)]
    from_blocks = stack_inputs(blocks, fcfg)
    from_vectors = inputs_from_vectors(np.stack([b.to_vector() for b in blocks]), fcfg)
    for modality, x in from_blocks.items():
        np.testing.assert_allclose(from_vectors[modality], x)


def test_scale_vectors_shared_by_both_input_paths():
    fcfg = FeatureConfig(position_scale_m=40.0, speed_scale_mps=10.0, extent_scale_m=5.0)
    np.testing.assert_array_equal(fcfg.radar_scale, [40.0, 40.0, 10.0, 5.0])
    np.testing.assert_array_equal(fcfg.gps_scale, [40.0, 40.0, 10.0])

    fb = extract_features(generate_scene(SceneConfig(seed=4, n_vehicles=5)), fcfg)
    inputs = inputs_from_vectors(fb.to_vector()[None, :], fcfg)
    np.testing.assert_allclose(inputs["radar"][0], (fb.points / fcfg.radar_scale).ravel())
    np.testing.assert_allclose(inputs["gps"][0], (fb.gps / fcfg.gps_scale).ravel())


def test_covariate_noise_is_zero_mean_on_valid_rows():
    draws = 10 ** 5
    radar_rows, gps_rows = draws // 4, -(-draws // 3)
    points = np.vstack([np.ones((radar_rows, 4)), np.zeros((50, 4))])
    gps = np.vstack([np.full((gps_rows, 3), 2.0), np.zeros((50, 3))])
    fb = FeatureBlock(occupancy=np.zeros((4, 4)), points=points, gps=gps,
                      brightness=np.full((4, 4), 0.5))
    noisy = apply_covariate_shift(fb, VAL2_NOISE, seed=17)

    radar_delta = noisy.points[:radar_rows] - points[:radar_rows]
    gps_delta = noisy.gps[:gps_rows] - gps[:gps_rows]
    assert abs(radar_delta.mean()) < 3 * VAL2_NOISE.radar_noise_std / np.sqrt(radar_delta.size)
    assert abs(gps_delta.mean()) < 3 * VAL2_NOISE.gps_noise_std / np.sqrt(gps_delta.size)
    assert radar_delta.std() == pytest.approx(VAL2_NOISE.radar_noise_std, rel=0.02)
    assert not noisy.points[radar_rows:].any()
    assert not noisy.gps[gps_rows:].any()
