"""
Scene builder for synthetic urban base-station scenes.

A scene holds one base station (BS), a grid of receivers, vehicles modelled
as axis-aligned boxes and static reflector facades. The BS sits at
``(0, 0, bs_height_m)``; the coverage area spans ``[0, area_x_m]`` in x and,
with the default ``edge_center`` origin, ``[-area_y_m/2, area_y_m/2]`` in y.
"""

import dataclasses
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, UsageError
from .settings import build_config, config_to_dict
from utils import FileManager

SCENE_SCHEMA = 1

# Blockers at least this tall are tagged "bus".
BUS_HEIGHT_M = 3.0

ORIGINS = ("edge_center", "corner")

CONCEPT_KINDS = ("concept_blockage", "concept_rx_height")
COVARIATE_KINDS = ("covariate_noise", "covariate_brightness")
SHIFT_KINDS = ("none",) + CONCEPT_KINDS + COVARIATE_KINDS

Vec3 = Tuple[float, float, float]
Range = Tuple[float, float]


def _range_errors(name: str, bounds: Sequence[float], positive: bool = True) -> List[str]:
    if len(bounds) != 2:
        return [f"{name} must be a [low, high] pair"]
    low, high = bounds
    errors = []
    if low > high:
        errors.append(f"{name} low exceeds high")
    if positive and low <= 0:
        errors.append(f"{name} must be strictly positive")
    if not positive and low < 0:
        errors.append(f"{name} must be non-negative")
    return errors


@dataclass(frozen=True)
class SceneConfig:
    """Geometry, traffic and radio constants of one BS environment."""

    seed: int = 0
    area_x_m: float = 80.0
    area_y_m: float = 40.0
    grid_nx: int = 8
    grid_ny: int = 8
    bs_height_m: float = 5.5
    rx_height_m: float = 1.5
    n_vehicles: int = 6
    # (length, width, height) ranges in meters
    vehicle_size_ranges: Tuple[Range, Range, Range] = ((4.0, 5.0), (1.7, 2.0), (1.4, 1.8))
    bus_size_ranges: Tuple[Range, Range, Range] = ((10.0, 12.0), (2.5, 3.0), (3.2, 3.6))
    bus_fraction: float = 0.0
    # lane centre lines, relative to the area's y midline
    lane_offsets_m: Tuple[float, ...] = (-6.0, -2.0, 2.0, 6.0)
    speed_range_mps: Range = (3.0, 12.0)
    speed_change_prob: float = 0.1
    n_reflector_facades: int = 2
    facade_offset_m: float = 2.0
    facade_height_m: float = 12.0
    carrier_ghz: float = 28.0
    ptx_dbm: float = 25.0
    gtx_db: float = 10.0
    grx_db: float = 10.0
    origin: str = "edge_center"

    @property
    def n_receivers(self) -> int:
        return self.grid_nx * self.grid_ny

    @property
    def y_min(self) -> float:
        return -self.area_y_m / 2.0 if self.origin == "edge_center" else 0.0

    @property
    def y_max(self) -> float:
        return self.y_min + self.area_y_m

    @property
    def y_mid(self) -> float:
        return self.y_min + self.area_y_m / 2.0

    def validate(self) -> List[str]:
        """
        Validate the configuration.

        Returns:
            List of validation errors (empty if valid)
        """
        errors = []
        for name in ("area_x_m", "area_y_m", "bs_height_m", "rx_height_m",
                     "carrier_ghz", "facade_height_m"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be strictly positive")
        if self.grid_nx < 1 or self.grid_ny < 1:
            errors.append("grid_nx and grid_ny must be at least 1")
        if self.n_vehicles < 0:
            errors.append("n_vehicles must be non-negative")
        if self.n_reflector_facades < 0:
            errors.append("n_reflector_facades must be non-negative")
        for label, ranges in (("vehicle_size_ranges", self.vehicle_size_ranges),
                              ("bus_size_ranges", self.bus_size_ranges)):
            if len(ranges) != 3:
                errors.append(f"{label} needs length, width and height ranges")
                continue
            for axis, bounds in zip(("length", "width", "height"), ranges):
                errors.extend(_range_errors(f"{label}.{axis}", bounds))
        errors.extend(_range_errors("speed_range_mps", self.speed_range_mps, positive=False))
        if not 0.0 <= self.bus_fraction <= 1.0:
            errors.append("bus_fraction must lie in [0, 1]")
        if not 0.0 <= self.speed_change_prob <= 1.0:
            errors.append("speed_change_prob must lie in [0, 1]")
        if not self.lane_offsets_m:
            errors.append("lane_offsets_m must name at least one lane")
        elif max(abs(y) for y in self.lane_offsets_m) >= self.area_y_m / 2.0:
            errors.append("lane_offsets_m must lie inside the area")
        if self.origin not in ORIGINS:
            errors.append(f"origin must be one of {ORIGINS}")
        return errors


@dataclass(frozen=True)
class Blocker:
    """Axis-aligned box; ``extent`` holds full side lengths."""

    center: Vec3
    extent: Vec3
    velocity: Tuple[float, float] = (0.0, 0.0)
    tag: str = "vehicle"

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * np.asarray(self.extent)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * np.asarray(self.extent)

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))

    def contains(self, point: Sequence[float]) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))


@dataclass(frozen=True)
class Facade:
    """Vertical reflecting rectangle in the plane ``y = y_m``."""

    y_m: float
    x_min: float
    x_max: float
    height_m: float


@dataclass(frozen=True)
class Scene:
    config: SceneConfig
    bs_pos: Vec3
    receivers: Tuple[Vec3, ...]
    blockers: Tuple[Blocker, ...] = ()
    facades: Tuple[Facade, ...] = ()

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    def receiver_array(self) -> np.ndarray:
        return np.asarray(self.receivers, dtype=float).reshape(-1, 3)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCENE_SCHEMA,
            "config": config_to_dict(self.config),
            "bs_pos": list(self.bs_pos),
            "receivers": [list(r) for r in self.receivers],
            "blockers": [config_to_dict(b) for b in self.blockers],
            "facades": [config_to_dict(f) for f in self.facades],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        if data.get("schema") != SCENE_SCHEMA:
            raise ConfigurationError(f"Unsupported scene schema: {data.get('schema')}")
        config = build_config(SceneConfig, data["config"], "scene")
        return cls(
            config=config,
            bs_pos=tuple(data["bs_pos"]),
            receivers=tuple(tuple(r) for r in data["receivers"]),
            blockers=tuple(
                Blocker(center=tuple(b["center"]), extent=tuple(b["extent"]),
                        velocity=tuple(b["velocity"]), tag=b["tag"])
                for b in data.get("blockers", [])
            ),
            facades=tuple(Facade(**f) for f in data.get("facades", [])),
        )

    def scene_hash(self) -> str:
        return FileManager.content_hash(self.to_dict())

    def __repr__(self):
        return (f"Scene({self.n_receivers} receivers, {len(self.blockers)} blockers, "
                f"{len(self.facades)} facades)")


def tag_for_height(height_m: float) -> str:
    return "bus" if height_m >= BUS_HEIGHT_M else "vehicle"


def receiver_grid(cfg: SceneConfig, rx_height_m: Optional[float] = None) -> Tuple[Vec3, ...]:
    """Cell centroids of the receiver grid, row-major over (i, j)."""
    dx = cfg.area_x_m / cfg.grid_nx
    dy = cfg.area_y_m / cfg.grid_ny
    z = cfg.rx_height_m if rx_height_m is None else rx_height_m
    return tuple(
        ((i + 0.5) * dx, cfg.y_min + (j + 0.5) * dy, z)
        for i in range(cfg.grid_nx)
        for j in range(cfg.grid_ny)
    )


def _facades(cfg: SceneConfig) -> Tuple[Facade, ...]:
    # Facades alternate between the two street sides and split the x span.
    per_side = (cfg.n_reflector_facades + 1) // 2
    facades = []
    for k in range(cfg.n_reflector_facades):
        side, slot = k % 2, k // 2
        width = cfg.area_x_m / max(per_side, 1)
        y = cfg.y_max + cfg.facade_offset_m if side == 0 else cfg.y_min - cfg.facade_offset_m
        facades.append(Facade(y_m=y, x_min=slot * width, x_max=(slot + 1) * width,
                              height_m=cfg.facade_height_m))
    return tuple(facades)


def _draw_box(rng: np.random.Generator, ranges) -> Vec3:
    return tuple(float(rng.uniform(low, high)) for low, high in ranges)


def _spawn_vehicle(cfg: SceneConfig, rng: np.random.Generator, bs_pos: Vec3) -> Blocker:
    is_bus = rng.random() < cfg.bus_fraction
    length, width, height = _draw_box(rng, cfg.bus_size_ranges if is_bus else cfg.vehicle_size_ranges)
    lane = float(cfg.lane_offsets_m[int(rng.integers(len(cfg.lane_offsets_m)))])
    heading = 1.0 if rng.random() < 0.5 else -1.0
    speed = float(rng.uniform(*cfg.speed_range_mps))
    x_low, x_high = length / 2.0, max(cfg.area_x_m - length / 2.0, length / 2.0)

    for _ in range(100):
        x = float(rng.uniform(x_low, x_high))
        blocker = Blocker(center=(x, cfg.y_mid + lane, height / 2.0),
                          extent=(length, width, height),
                          velocity=(heading * speed, 0.0),
                          tag=tag_for_height(height))
        if not blocker.contains(bs_pos):
            return blocker
    raise ConfigurationError("Could not place a vehicle clear of the BS position")


def generate_scene(cfg: SceneConfig) -> Scene:
    """
    Generate the initial frame of a scene.

    Args:
        cfg: Scene configuration

    Returns:
        Scene whose contents depend only on ``cfg`` (including its seed)

    Raises:
        ConfigurationError: If the configuration is invalid
    """
    errors = cfg.validate()
    if errors:
        raise ConfigurationError("Invalid scene config: " + "; ".join(errors))

    rng = np.random.default_rng(cfg.seed)
    bs_pos = (0.0, 0.0, cfg.bs_height_m)
    blockers = tuple(_spawn_vehicle(cfg, rng, bs_pos) for _ in range(cfg.n_vehicles))
    return Scene(config=cfg, bs_pos=bs_pos, receivers=receiver_grid(cfg),
                 blockers=blockers, facades=_facades(cfg))


def _clamp_axis(value: float, half: float, low: float, high: float) -> Tuple[float, bool]:
    lo, hi = low + half, high - half
    if lo > hi:
        return (low + high) / 2.0, True
    if value < lo:
        return lo, True
    if value > hi:
        return hi, True
    return value, False


def advance_frame(scene: Scene, dt_s: float, seed: int) -> Scene:
    """
    Move every vehicle forward by ``dt_s`` seconds.

    Vehicles keep a piecewise-constant velocity capped at the configured
    speed limit. A vehicle clamped at the area boundary reverses its x
    heading; after moving, each vehicle re-draws its speed with probability
    ``speed_change_prob``.

    Args:
        scene: Current frame
        dt_s: Time step in seconds
        seed: Seed for the speed re-draws

    Returns:
        Next frame
    """
    if dt_s < 0:
        raise UsageError(f"dt_s must be non-negative, got {dt_s}")
    if dt_s == 0:
        return scene

    cfg = scene.config
    rng = np.random.default_rng(seed)
    v_max = cfg.speed_range_mps[1]
    moved = []
    for blocker in scene.blockers:
        vx, vy = blocker.velocity
        speed = blocker.speed
        if speed > v_max > 0:
            vx, vy = vx * v_max / speed, vy * v_max / speed
        cx, cy, cz = blocker.center
        ex, ey, _ = blocker.extent
        x, hit_x = _clamp_axis(cx + vx * dt_s, ex / 2.0, 0.0, cfg.area_x_m)
        y, hit_y = _clamp_axis(cy + vy * dt_s, ey / 2.0, cfg.y_min, cfg.y_max)
        if hit_x:
            vx = -vx
        if hit_y:
            vy = -vy

        redraw = rng.random() < cfg.speed_change_prob
        new_speed = float(rng.uniform(*cfg.speed_range_mps))
        current = float(np.hypot(vx, vy))
        if redraw and current > 0:
            vx, vy = vx * new_speed / current, vy * new_speed / current

        moved.append(dataclasses.replace(blocker, center=(x, y, cz), velocity=(vx, vy)))
    return dataclasses.replace(scene, blockers=tuple(moved))


@dataclass(frozen=True)
class BlockerEdit:
    """One blocker change: ``add`` a box, or ``resize``/``move`` blocker ``index``."""

    op: str
    index: int = -1
    center: Optional[Vec3] = None
    extent: Optional[Vec3] = None


@dataclass(frozen=True)
class DomainShiftSpec:
    """
    A concrete domain shift applied to one frame.

    Concept kinds carry geometry edits (blockers, receiver height);
    covariate kinds carry per-modality noise and a brightness scale.
    """

    kind: str = "none"
    blocker_edits: Tuple[BlockerEdit, ...] = ()
    rx_height_m: Optional[float] = None
    lidar_noise_std: float = 0.0
    radar_noise_std: float = 0.0
    gps_noise_std: float = 0.0
    brightness_scale: float = 1.0

    @property
    def is_concept(self) -> bool:
        return self.kind in CONCEPT_KINDS

    @property
    def is_covariate(self) -> bool:
        return self.kind in COVARIATE_KINDS

    @property
    def has_geometry(self) -> bool:
        return bool(self.blocker_edits) or self.rx_height_m is not None

    @property
    def has_feature_changes(self) -> bool:
        return (self.lidar_noise_std, self.radar_noise_std, self.gps_noise_std,
                self.brightness_scale) != (0.0, 0.0, 0.0, 1.0)

    def validate(self) -> List[str]:
        errors = []
        if self.kind not in SHIFT_KINDS:
            errors.append(f"kind must be one of {SHIFT_KINDS}")
        if self.is_concept and self.has_feature_changes:
            errors.append("concept shifts cannot change feature noise or brightness")
        if self.is_covariate and self.has_geometry:
            errors.append("covariate shifts cannot change scene geometry")
        if min(self.lidar_noise_std, self.radar_noise_std, self.gps_noise_std) < 0:
            errors.append("noise stds must be non-negative")
        if self.brightness_scale < 0:
            errors.append("brightness_scale must be non-negative")
        if self.rx_height_m is not None and self.rx_height_m <= 0:
            errors.append("rx_height_m must be strictly positive")
        for edit in self.blocker_edits:
            if edit.op not in ("add", "resize", "move"):
                errors.append(f"unknown blocker edit '{edit.op}'")
        return errors


def apply_concept_shift(scene: Scene, spec: DomainShiftSpec) -> Scene:
    """
    Apply the geometry edits of a concept shift.

    Args:
        scene: Frame to shift (left untouched)
        spec: Concept (or ``none``) shift

    Returns:
        New frame differing only in blockers and/or receiver heights

    Raises:
        UsageError: If ``spec`` is a covariate shift or is malformed
    """
    if spec.is_covariate:
        raise UsageError(f"apply_concept_shift got covariate shift '{spec.kind}'")
    errors = spec.validate()
    if errors:
        raise UsageError("Invalid shift: " + "; ".join(errors))

    blockers = list(scene.blockers)
    for edit in spec.blocker_edits:
        if edit.op == "add":
            if edit.center is None or edit.extent is None:
                raise UsageError("'add' needs both center and extent")
            blocker = Blocker(center=tuple(edit.center), extent=tuple(edit.extent),
                              tag=tag_for_height(edit.extent[2]))
        else:
            if not 0 <= edit.index < len(blockers):
                raise UsageError(f"Blocker index {edit.index} out of range")
            blocker = blockers[edit.index]
            if edit.op == "resize":
                if edit.extent is None:
                    raise UsageError("'resize' needs an extent")
                cx, cy, _ = blocker.center
                blocker = dataclasses.replace(
                    blocker, extent=tuple(edit.extent),
                    center=(cx, cy, edit.extent[2] / 2.0),
                    tag=tag_for_height(edit.extent[2]))
            else:
                if edit.center is None:
                    raise UsageError("'move' needs a center")
                blocker = dataclasses.replace(blocker, center=tuple(edit.center))

        if blocker.contains(scene.bs_pos):
            raise UsageError("Shifted blocker would contain the BS position")
        if edit.op == "add":
            blockers.append(blocker)
        else:
            blockers[edit.index] = blocker

    receivers = scene.receivers
    if spec.rx_height_m is not None:
        receivers = tuple((x, y, float(spec.rx_height_m)) for x, y, _ in receivers)

    return dataclasses.replace(scene, blockers=tuple(blockers), receivers=receivers)


@dataclass(frozen=True)
class ShiftProfile:
    """
    Recipe that draws a fresh DomainShiftSpec for every frame of a split.

    ``bus_blockage`` drops ``n_buses`` large vehicles at random spots of a
    region, ``rx_height`` moves every receiver, ``sensor_noise`` perturbs
    the sensor features.
    """

    kind: str = "bus_blockage"
    n_buses: int = 2
    region_x_m: Range = (15.0, 70.0)
    # relative to the area's y midline
    region_y_m: Range = (-14.0, 14.0)
    rx_height_m: float = 1.8
    lidar_noise_std: float = 0.25
    radar_noise_std: float = 1.0
    gps_noise_std: float = 0.5
    brightness_scale: float = 0.75

    def validate(self) -> List[str]:
        errors = []
        if self.kind not in ("bus_blockage", "rx_height", "sensor_noise"):
            errors.append(f"unknown shift profile kind '{self.kind}'")
        if self.n_buses < 0:
            errors.append("n_buses must be non-negative")
        errors.extend(_range_errors("region_x_m", self.region_x_m))
        if self.region_y_m[0] > self.region_y_m[1]:
            errors.append("region_y_m low exceeds high")
        if self.rx_height_m <= 0:
            errors.append("rx_height_m must be strictly positive")
        if min(self.lidar_noise_std, self.radar_noise_std, self.gps_noise_std) < 0:
            errors.append("noise stds must be non-negative")
        return errors

    def sample(self, cfg: SceneConfig, rng: np.random.Generator) -> DomainShiftSpec:
        if self.kind == "rx_height":
            return DomainShiftSpec(kind="concept_rx_height", rx_height_m=self.rx_height_m)
        if self.kind == "sensor_noise":
            return DomainShiftSpec(kind="covariate_noise",
                                   lidar_noise_std=self.lidar_noise_std,
                                   radar_noise_std=self.radar_noise_std,
                                   gps_noise_std=self.gps_noise_std,
                                   brightness_scale=self.brightness_scale)

        edits = []
        for _ in range(self.n_buses):
            extent = _draw_box(rng, cfg.bus_size_ranges)
            x = float(rng.uniform(*self.region_x_m))
            y = cfg.y_mid + float(rng.uniform(*self.region_y_m))
            edits.append(BlockerEdit(op="add", center=(x, y, extent[2] / 2.0), extent=extent))
        return DomainShiftSpec(kind="concept_blockage", blocker_edits=tuple(edits))
