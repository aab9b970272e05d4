"""
Ground-truth RSS oracle.

LoS receivers get the 3GPP UMi LoS path loss plus first-order facade
reflections (image method); NLoS receivers get the LoS value minus a
parametric blockage attenuation. Every receiver satisfies

    rss = r_los + r_reflection - r_blockage

exactly, with ``r_blockage = 0`` on LoS receivers and ``r_reflection = 0``
on NLoS receivers.
"""

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError
from .scene_builder import Facade, Scene


@dataclass(frozen=True)
class PathLossParams:
    """UMi LoS path loss, shadowing and blockage/reflection constants."""

    fc_ghz: float = 28.0
    shadow_sigma_db: float = 4.0
    shadow_seed: int = 0
    per_blocker_db: float = 20.0
    per_meter_db: float = 0.4
    blockage_cap_db: float = 45.0
    reflection_loss_db: float = 6.0

    def validate(self) -> List[str]:
        errors = []
        if self.fc_ghz <= 0:
            errors.append("fc_ghz must be strictly positive")
        if self.shadow_sigma_db < 0:
            errors.append("shadow_sigma_db must be non-negative")
        if self.shadow_seed < 0:
            errors.append("shadow_seed must be non-negative")
        for name in ("per_blocker_db", "per_meter_db", "blockage_cap_db", "reflection_loss_db"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be non-negative")
        return errors


@dataclass(frozen=True)
class RssMap:
    """Per-receiver RSS labels in grid order."""

    rss_dbm: np.ndarray
    los_mask: np.ndarray
    r_los_dbm: np.ndarray
    r_reflection_db: np.ndarray
    r_blockage_db: np.ndarray

    @property
    def n_receivers(self) -> int:
        return int(self.rss_dbm.shape[0])


class LosResult(NamedTuple):
    is_los: bool
    blocked_length_m: float
    n_blockers: int


def shadowing_db(p: PathLossParams, rx_index: int) -> float:
    """Shadow fading frozen per (shadow_seed, rx_index)."""
    if p.shadow_sigma_db == 0:
        return 0.0
    rng = np.random.default_rng([p.shadow_seed, rx_index])
    return float(rng.normal(0.0, p.shadow_sigma_db))


def pathloss_umi_los(d_m: float, p: PathLossParams, rx_index: Optional[int] = None) -> float:
    """
    3GPP UMi LoS path loss in dB.

    Args:
        d_m: 3-D distance in meters
        p: Path loss parameters
        rx_index: Receiver whose frozen shadowing term is added (None: no shadowing)

    Raises:
        DomainError: If ``d_m <= 0``
    """
    if not d_m > 0:
        raise DomainError(f"Path loss distance must be positive, got {d_m}")
    shadow = 0.0 if rx_index is None else shadowing_db(p, rx_index)
    return 32.4 + 17.3 * math.log10(d_m) + 20.0 * math.log10(p.fc_ghz) + shadow


def segment_box_chords(p0: Sequence[float], p1: Sequence[float],
                       lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """
    Length of the segment p0→p1 inside each axis-aligned box (slab method).

    Args:
        p0, p1: Segment end points
        lower, upper: (B, 3) box corners

    Returns:
        (B,) chord lengths in meters
    """
    lower = np.asarray(lower, dtype=float).reshape(-1, 3)
    upper = np.asarray(upper, dtype=float).reshape(-1, 3)
    if lower.shape[0] == 0:
        return np.zeros(0)

    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    length = float(np.linalg.norm(d))
    if length == 0.0:
        return np.zeros(lower.shape[0])

    parallel = d == 0.0
    inside = (p0 >= lower) & (p0 <= upper)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lower - p0) / d
        t2 = (upper - p0) / d
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))

    t_enter = np.maximum(t_near.max(axis=1), 0.0)
    t_exit = np.minimum(t_far.min(axis=1), 1.0)
    return np.clip(t_exit - t_enter, 0.0, None) * length


def _blocker_bounds(scene: Scene):
    if not scene.blockers:
        return np.zeros((0, 3)), np.zeros((0, 3))
    lower = np.array([b.lower for b in scene.blockers])
    upper = np.array([b.upper for b in scene.blockers])
    return lower, upper


def _segment_clear(p0, p1, lower, upper) -> bool:
    return not np.any(segment_box_chords(p0, p1, lower, upper) > 0.0)


def los_test(scene: Scene, rx_index: int) -> LosResult:
    """
    Check the BS→receiver segment against every blocker.

    Returns:
        LoS flag, total chord length through blockers and number of
        blockers the segment crosses
    """
    if not 0 <= rx_index < scene.n_receivers:
        raise ContractError(f"rx_index {rx_index} out of range for {scene.n_receivers} receivers")
    lower, upper = _blocker_bounds(scene)
    chords = segment_box_chords(scene.bs_pos, scene.receivers[rx_index], lower, upper)
    crossed = chords > 0.0
    return LosResult(is_los=not bool(crossed.any()),
                     blocked_length_m=float(chords[crossed].sum()),
                     n_blockers=int(crossed.sum()))


def blockage_attenuation_db(n_blockers: int, blocked_length_m: float, p: PathLossParams) -> float:
    return min(p.blockage_cap_db,
               p.per_blocker_db * n_blockers + p.per_meter_db * blocked_length_m)


def reflection_path_length(bs: np.ndarray, rx: np.ndarray, facade: Facade,
                           lower: np.ndarray, upper: np.ndarray) -> Optional[float]:
    """
    Length of the first-order specular path off ``facade``.

    Returns None when the specular point misses the facade, when BS and
    receiver sit on opposite sides of its plane, or when either leg is
    blocked.
    """
    image = bs.copy()
    image[1] = 2.0 * facade.y_m - bs[1]
    if (bs[1] - facade.y_m) * (rx[1] - facade.y_m) <= 0.0:
        return None
    t = (facade.y_m - image[1]) / (rx[1] - image[1])
    point = image + t * (rx - image)
    if not (facade.x_min <= point[0] <= facade.x_max and 0.0 <= point[2] <= facade.height_m):
        return None
    if not (_segment_clear(bs, point, lower, upper) and _segment_clear(point, rx, lower, upper)):
        return None
    return float(np.linalg.norm(rx - image))


def compute_rss_map(scene: Scene, p: PathLossParams) -> RssMap:
    """
    Compute the labelled RSS map of one frame.

    Args:
        scene: Frame geometry
        p: Path loss parameters

    Returns:
        RssMap with the exact LoS/reflection/blockage decomposition
    """
    cfg = scene.config
    eirp = cfg.ptx_dbm + cfg.gtx_db + cfg.grx_db
    bs = np.asarray(scene.bs_pos, dtype=float)
    lower, upper = _blocker_bounds(scene)

    n = scene.n_receivers
    r_los = np.empty(n)
    r_reflection = np.zeros(n)
    r_blockage = np.zeros(n)
    los_mask = np.zeros(n, dtype=bool)

    for idx, rx_pos in enumerate(scene.receivers):
        rx = np.asarray(rx_pos, dtype=float)
        shadow = shadowing_db(p, idx)
        r_los[idx] = eirp - pathloss_umi_los(float(np.linalg.norm(rx - bs)), p) - shadow

        los = los_test(scene, idx)
        los_mask[idx] = los.is_los
        if not los.is_los:
            r_blockage[idx] = blockage_attenuation_db(los.n_blockers, los.blocked_length_m, p)
            continue

        # Reflected powers relative to the direct path, in linear scale.
        relative = 1.0
        for facade in scene.facades:
            length = reflection_path_length(bs, rx, facade, lower, upper)
            if length is None:
                continue
            r_path = eirp - pathloss_umi_los(length, p) - shadow - p.reflection_loss_db
            relative += 10.0 ** ((r_path - r_los[idx]) / 10.0)
        r_reflection[idx] = 10.0 * math.log10(relative)

    rss = r_los + r_reflection - r_blockage
    for array in (rss, los_mask, r_los, r_reflection, r_blockage):
        array.setflags(write=False)
    return RssMap(rss_dbm=rss, los_mask=los_mask, r_los_dbm=r_los,
                  r_reflection_db=r_reflection, r_blockage_db=r_blockage)
