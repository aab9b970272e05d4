import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "shared" / "scripts"))

from core.channel import PathLossParams  # noqa: E402
from core.dataset import RssDataset, generate_frames  # noqa: E402
from core.features import FeatureConfig  # noqa: E402
from core.net import NetConfig  # noqa: E402
from core.scene_builder import SceneConfig, generate_scene  # noqa: E402


@pytest.fixture
def scene_config():
    return SceneConfig(seed=3, grid_nx=4, grid_ny=4, n_vehicles=4)


@pytest.fixture
def feature_config():
    return FeatureConfig(grid_size=8, n_points=4, max_vehicles=6)


@pytest.fixture
def net_config():
    return NetConfig(n_receivers=16, encoder_hidden=6, fused_dim=8, head_hidden=8, embed_dim=3)


@pytest.fixture
def pathloss():
    return PathLossParams(shadow_sigma_db=2.0)


def make_dataset(scene_cfg, fcfg, pl, n_frames=12, seed=11, shift=None, split="train", bs_id=1):
    frames = list(generate_frames(generate_scene(scene_cfg), n_frames, 0.3, seed, pl, fcfg, shift))
    return RssDataset.from_frames(frames, fcfg, bs_id=bs_id, split=split)


@pytest.fixture
def tiny_dataset(scene_config, feature_config, pathloss):
    return make_dataset(scene_config, feature_config, pathloss)
