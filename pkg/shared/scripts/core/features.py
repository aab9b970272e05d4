"""
Multi-modal sensor features synthesized from a scene.

Four stand-in modalities per frame:

- lidar: bird's-eye occupancy grid (G x G, binary)
- radar: P points ``[x, y, speed, extent]`` kept by farthest-point sampling
- gps: up to V vehicles ``[x, y, speed]``, zero-padded
- rgb: blocker silhouettes shaded by a global brightness scalar (G x G in [0, 1])

The flat vector order is: occupancy row-major, radar points, gps rows,
brightness row-major.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .errors import ContractError, UsageError
from .scene_builder import DomainShiftSpec, Scene, SceneConfig

MODALITIES = ("lidar", "radar", "gps", "rgb")


@dataclass(frozen=True)
class FeatureConfig:
    grid_size: int = 16
    n_points: int = 8
    max_vehicles: int = 16
    brightness: float = 1.0
    ambient: float = 0.25
    # silhouettes saturate at this height
    shade_height_m: float = 4.0
    # input normalisation applied before the encoders
    position_scale_m: float = 80.0
    speed_scale_mps: float = 15.0
    extent_scale_m: float = 12.0

    def validate(self) -> List[str]:
        errors = []
        for name in ("grid_size", "n_points", "max_vehicles"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be at least 1")
        if not 0.0 <= self.brightness <= 1.0:
            errors.append("brightness must lie in [0, 1]")
        if not 0.0 <= self.ambient <= 1.0:
            errors.append("ambient must lie in [0, 1]")
        for name in ("shade_height_m", "position_scale_m", "speed_scale_mps", "extent_scale_m"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be strictly positive")
        return errors

    def modality_dims(self) -> Dict[str, int]:
        g2 = self.grid_size * self.grid_size
        return {
            "lidar": g2,
            "radar": self.n_points * 4,
            "gps": self.max_vehicles * 3,
            "rgb": g2,
        }

    @property
    def vector_size(self) -> int:
        return sum(self.modality_dims().values())

    @property
    def radar_scale(self) -> np.ndarray:
        """Divisors for radar rows ``[x, y, speed, extent]``."""
        return np.array([self.position_scale_m, self.position_scale_m,
                         self.speed_scale_mps, self.extent_scale_m])

    @property
    def gps_scale(self) -> np.ndarray:
        """Divisors for gps rows ``[x, y, speed]``."""
        return self.radar_scale[:3]


@dataclass(frozen=True)
class FeatureBlock:
    occupancy: np.ndarray
    points: np.ndarray
    gps: np.ndarray
    brightness: np.ndarray

    @property
    def n_points_valid(self) -> int:
        return int(np.any(self.points != 0.0, axis=1).sum())

    @property
    def n_gps_valid(self) -> int:
        return int(np.any(self.gps != 0.0, axis=1).sum())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.occupancy.ravel(), self.points.ravel(),
                               self.gps.ravel(), self.brightness.ravel()])

    @classmethod
    def from_vector(cls, vector: Sequence[float], fcfg: FeatureConfig) -> "FeatureBlock":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (fcfg.vector_size,):
            raise ContractError(
                f"Feature vector has shape {vector.shape}, expected ({fcfg.vector_size},)")
        g = fcfg.grid_size
        dims = fcfg.modality_dims()
        parts = np.split(vector, np.cumsum([dims[m] for m in MODALITIES])[:-1])
        return cls(occupancy=parts[0].reshape(g, g),
                   points=parts[1].reshape(fcfg.n_points, 4),
                   gps=parts[2].reshape(fcfg.max_vehicles, 3),
                   brightness=parts[3].reshape(g, g))


def _cell_span(low: float, high: float, origin: float, size: float, n: int):
    """Indices of cells that overlap (low, high) with positive length."""
    first = max(int(math.floor((low - origin) / size)), 0)
    last = min(int(math.ceil((high - origin) / size)) - 1, n - 1)
    return first, last


def farthest_point_order(xy: np.ndarray, k: int, anchor: Sequence[float] = (0.0, 0.0)) -> List[int]:
    """
    Farthest-point subsample of ``xy``.

    Starts from the point nearest ``anchor`` and repeatedly adds the point
    farthest from everything already chosen (ties go to the lower index).
    """
    n = xy.shape[0]
    if n <= k:
        return list(range(n))
    chosen = [int(np.argmin(np.linalg.norm(xy - np.asarray(anchor), axis=1)))]
    dist = np.linalg.norm(xy - xy[chosen[0]], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(xy - xy[nxt], axis=1))
    return chosen


def extract_features(scene: Scene, fcfg: FeatureConfig) -> FeatureBlock:
    """
    Synthesize the sensor views of one frame.

    Args:
        scene: Frame geometry
        fcfg: Feature configuration

    Returns:
        FeatureBlock with fixed shapes; padding rows are zero
    """
    cfg: SceneConfig = scene.config
    g = fcfg.grid_size
    cell_x = cfg.area_x_m / g
    cell_y = cfg.area_y_m / g

    occupancy = np.zeros((g, g))
    shade = np.zeros((g, g))
    for blocker in scene.blockers:
        lo, hi = blocker.lower, blocker.upper
        a0, a1 = _cell_span(lo[0], hi[0], 0.0, cell_x, g)
        b0, b1 = _cell_span(lo[1], hi[1], cfg.y_min, cell_y, g)
        if a0 > a1 or b0 > b1:
            continue
        occupancy[a0:a1 + 1, b0:b1 + 1] = 1.0
        value = min(blocker.extent[2] / fcfg.shade_height_m, 1.0)
        shade[a0:a1 + 1, b0:b1 + 1] = np.maximum(shade[a0:a1 + 1, b0:b1 + 1], value)

    brightness = fcfg.brightness * (fcfg.ambient + (1.0 - fcfg.ambient) * shade)

    rows = np.array([[b.center[0], b.center[1], b.speed, max(b.extent[0], b.extent[1])]
                     for b in scene.blockers]).reshape(-1, 4)
    points = np.zeros((fcfg.n_points, 4))
    order = farthest_point_order(rows[:, :2], fcfg.n_points, anchor=scene.bs_pos[:2])
    points[:len(order)] = rows[order]

    gps = np.zeros((fcfg.max_vehicles, 3))
    kept = rows[:fcfg.max_vehicles, :3]
    gps[:kept.shape[0]] = kept

    return FeatureBlock(occupancy=occupancy, points=points, gps=gps,
                        brightness=np.clip(brightness, 0.0, 1.0))


def apply_covariate_shift(fb: FeatureBlock, spec: DomainShiftSpec, seed: int) -> FeatureBlock:
    """
    Perturb sensor features without touching the scene.

    Gaussian noise with the per-modality std of ``spec`` is added to valid radar
    and gps rows; lidar occupancy is perturbed and re-thresholded at 0.5;
    brightness is scaled and clipped to [0, 1].

    Raises:
        UsageError: If ``spec`` is a concept shift or is malformed
    """
    if spec.is_concept:
        raise UsageError(f"apply_covariate_shift got concept shift '{spec.kind}'")
    errors = spec.validate()
    if errors:
        raise UsageError("Invalid shift: " + "; ".join(errors))

    rng = np.random.default_rng(seed)
    lidar_noise = rng.standard_normal(fb.occupancy.shape) * spec.lidar_noise_std
    radar_noise = rng.standard_normal(fb.points.shape) * spec.radar_noise_std
    gps_noise = rng.standard_normal(fb.gps.shape) * spec.gps_noise_std

    occupancy = fb.occupancy
    if spec.lidar_noise_std > 0:
        occupancy = (fb.occupancy + lidar_noise > 0.5).astype(float)

    points = fb.points.copy()
    valid = np.any(fb.points != 0.0, axis=1)
    points[valid] += radar_noise[valid]

    gps = fb.gps.copy()
    valid = np.any(fb.gps != 0.0, axis=1)
    gps[valid] += gps_noise[valid]

    brightness = np.clip(fb.brightness * spec.brightness_scale, 0.0, 1.0)
    return FeatureBlock(occupancy=occupancy, points=points, gps=gps, brightness=brightness)


def modality_inputs(fb: FeatureBlock, fcfg: FeatureConfig) -> Dict[str, np.ndarray]:
    """Normalised flat encoder inputs for one frame."""
    return {
        "lidar": fb.occupancy.ravel(),
        "radar": (fb.points / fcfg.radar_scale).ravel(),
        "gps": (fb.gps / fcfg.gps_scale).ravel(),
        "rgb": fb.brightness.ravel(),
    }


def stack_inputs(blocks: Sequence[FeatureBlock], fcfg: FeatureConfig) -> Dict[str, np.ndarray]:
    """Batch of encoder inputs, one (B, d) array per modality."""
    per_frame = [modality_inputs(fb, fcfg) for fb in blocks]
    dims = fcfg.modality_dims()
    return {
        m: (np.stack([p[m] for p in per_frame]) if per_frame else np.zeros((0, dims[m])))
        for m in MODALITIES
    }


def inputs_from_vectors(vectors: np.ndarray, fcfg: FeatureConfig) -> Dict[str, np.ndarray]:
    """Normalised encoder inputs for a (S, D) matrix of flat feature vectors."""
    vectors = np.asarray(vectors, dtype=float).reshape(-1, fcfg.vector_size)
    dims = fcfg.modality_dims()
    parts = np.split(vectors, np.cumsum([dims[m] for m in MODALITIES])[:-1], axis=1)
    count = vectors.shape[0]
    radar = (parts[1].reshape(count, fcfg.n_points, 4) / fcfg.radar_scale).reshape(count, -1)
    gps = (parts[2].reshape(count, fcfg.max_vehicles, 3) / fcfg.gps_scale).reshape(count, -1)
    return {"lidar": parts[0], "radar": radar, "gps": gps, "rgb": parts[3]}
