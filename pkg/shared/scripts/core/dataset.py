"""
Per-BS datasets: frame generation and the JSON-lines record format.

One record per frame::

    {"schema": 1, "config_hash": ..., "bs_id": k, "split": "train",
     "frame_id": t, "scene_hash": ..., "features": [...],
     "rss_dbm": [...], "los_mask": [0/1, ...], "r_los_dbm": [...],
     "r_reflection_db": [...], "r_blockage_db": [...]}

Files are named ``bs{k}_{split}.jsonl`` with splits ``train``, ``val1``
(concept shift) and ``val2`` (covariate shift).
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .channel import PathLossParams, RssMap, compute_rss_map
from .errors import ContractError, DatasetMissingError, UsageError
from .features import (FeatureBlock, FeatureConfig, apply_covariate_shift,
                       extract_features, inputs_from_vectors)
from .scene_builder import Scene, ShiftProfile, advance_frame, apply_concept_shift
from .settings import derive_seed
from utils import FileManager

RECORD_SCHEMA = 1
SPLITS = ("train", "val1", "val2")


@dataclass(frozen=True)
class Frame:
    frame_id: int
    scene: Scene
    features: FeatureBlock
    rss: RssMap


def split_path(data_dir, bs_id: int, split: str) -> Path:
    return Path(data_dir) / f"bs{bs_id}_{split}.jsonl"


def generate_frames(scene: Scene, n_frames: int, dt_s: float, seed: int,
                    pl: PathLossParams, fcfg: FeatureConfig,
                    shift: Optional[ShiftProfile] = None) -> Iterator[Frame]:
    """
    Roll a scene forward and label every frame.

    Concept profiles edit the labelled geometry of each frame (traffic keeps
    evolving from the unshifted frame); covariate profiles perturb only the
    features, so labels are those of the clean frame.

    Args:
        scene: Initial frame
        n_frames: Number of frames to emit
        dt_s: Time between frames
        seed: Stream seed for motion, shift placement and sensor noise
        pl: Path loss parameters
        fcfg: Feature configuration
        shift: Optional per-frame shift profile
    """
    current = scene
    for frame_id in range(n_frames):
        if frame_id > 0:
            current = advance_frame(current, dt_s, derive_seed(seed, frame_id, 0))

        labelled = current
        spec = None
        if shift is not None:
            rng = np.random.default_rng(derive_seed(seed, frame_id, 1))
            spec = shift.sample(current.config, rng)
            if spec.is_concept:
                labelled = apply_concept_shift(current, spec)

        fb = extract_features(labelled, fcfg)
        if spec is not None and spec.is_covariate:
            fb = apply_covariate_shift(fb, spec, derive_seed(seed, frame_id, 2))

        yield Frame(frame_id=frame_id, scene=labelled, features=fb,
                    rss=compute_rss_map(labelled, pl))


def make_record(frame: Frame, bs_id: int, split: str, config_hash: str) -> Dict[str, Any]:
    rss = frame.rss
    return {
        "schema": RECORD_SCHEMA,
        "config_hash": config_hash,
        "bs_id": bs_id,
        "split": split,
        "frame_id": frame.frame_id,
        "scene_hash": frame.scene.scene_hash(),
        "features": frame.features.to_vector().tolist(),
        "rss_dbm": rss.rss_dbm.tolist(),
        "los_mask": rss.los_mask.astype(int).tolist(),
        "r_los_dbm": rss.r_los_dbm.tolist(),
        "r_reflection_db": rss.r_reflection_db.tolist(),
        "r_blockage_db": rss.r_blockage_db.tolist(),
    }


@dataclass
class RssDataset:
    """Column-oriented view of one split of one BS."""

    bs_id: int
    split: str
    feature_config: FeatureConfig
    frame_ids: np.ndarray
    features: np.ndarray
    rss: np.ndarray
    los_mask: np.ndarray
    r_los: np.ndarray
    r_reflection: np.ndarray
    r_blockage: np.ndarray
    _inputs: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.frame_ids.shape[0])

    @property
    def n_receivers(self) -> int:
        return int(self.rss.shape[1])

    @property
    def inputs(self) -> Dict[str, np.ndarray]:
        """Normalised encoder inputs for every frame, computed once."""
        if self._inputs is None:
            self._inputs = inputs_from_vectors(self.features, self.feature_config)
        return self._inputs

    def batch_inputs(self, indices: np.ndarray) -> Dict[str, np.ndarray]:
        return {m: x[indices] for m, x in self.inputs.items()}

    def subset(self, indices: Sequence[int]) -> "RssDataset":
        idx = np.asarray(indices, dtype=int)
        return replace(self, frame_ids=self.frame_ids[idx], features=self.features[idx],
                       rss=self.rss[idx], los_mask=self.los_mask[idx], r_los=self.r_los[idx],
                       r_reflection=self.r_reflection[idx], r_blockage=self.r_blockage[idx],
                       _inputs=None)

    def head(self, count: int) -> "RssDataset":
        return self.subset(np.arange(min(count, len(self))))

    def nested_prefix(self, fraction: float, seed: int) -> "RssDataset":
        """
        First ``ceil(fraction * len)`` frames of a fixed shuffle.

        The shuffle depends only on ``seed``, so smaller fractions are
        subsets of larger ones.
        """
        if not 0.0 < fraction <= 1.0:
            raise UsageError(f"fraction must lie in (0, 1], got {fraction}")
        order = np.random.default_rng(seed).permutation(len(self))
        count = max(1, int(np.ceil(fraction * len(self))))
        return self.subset(np.sort(order[:count]))

    @classmethod
    def from_records(cls, records: Sequence[Dict[str, Any]], fcfg: FeatureConfig,
                     bs_id: int = 0, split: str = "train") -> "RssDataset":
        if not records:
            return cls(bs_id=bs_id, split=split, feature_config=fcfg,
                       frame_ids=np.zeros(0, dtype=int),
                       features=np.zeros((0, fcfg.vector_size)),
                       rss=np.zeros((0, 0)), los_mask=np.zeros((0, 0), dtype=bool),
                       r_los=np.zeros((0, 0)), r_reflection=np.zeros((0, 0)),
                       r_blockage=np.zeros((0, 0)))
        features = np.array([r["features"] for r in records], dtype=float)
        if features.shape[1] != fcfg.vector_size:
            raise ContractError(
                f"Records carry {features.shape[1]} features, config expects {fcfg.vector_size}")
        return cls(
            bs_id=bs_id,
            split=split,
            feature_config=fcfg,
            frame_ids=np.array([r["frame_id"] for r in records], dtype=int),
            features=features,
            rss=np.array([r["rss_dbm"] for r in records], dtype=float),
            los_mask=np.array([r["los_mask"] for r in records], dtype=bool),
            r_los=np.array([r["r_los_dbm"] for r in records], dtype=float),
            r_reflection=np.array([r["r_reflection_db"] for r in records], dtype=float),
            r_blockage=np.array([r["r_blockage_db"] for r in records], dtype=float),
        )

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], fcfg: FeatureConfig,
                    bs_id: int = 0, split: str = "train") -> "RssDataset":
        return cls.from_records([make_record(f, bs_id, split, "") for f in frames],
                                fcfg, bs_id, split)


def write_split(data_dir, bs_id: int, split: str, frames: Sequence[Frame],
                config_hash: str) -> Tuple[Path, int]:
    path = split_path(data_dir, bs_id, split)
    count = FileManager.write_jsonl(path, (make_record(f, bs_id, split, config_hash)
                                           for f in frames))
    return path, count


def load_split(data_dir, bs_id: int, split: str, fcfg: FeatureConfig,
               config_hash: Optional[str] = None) -> RssDataset:
    """
    Load one split of one BS.

    Raises:
        DatasetMissingError: If the file does not exist, or was generated
            from a different configuration
    """
    path = split_path(data_dir, bs_id, split)
    if not path.exists():
        raise DatasetMissingError(path)
    records: List[Dict[str, Any]] = list(FileManager.read_jsonl(path))
    if config_hash is not None and records and records[0].get("config_hash") != config_hash:
        raise DatasetMissingError(path, hint="generated from another config; run gen first")
    return RssDataset.from_records(records, fcfg, bs_id=bs_id, split=split)
