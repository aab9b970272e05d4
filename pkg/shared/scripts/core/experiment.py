"""
Experiment configuration and the commands driven by the entry scripts.

An experiment definition is a YAML (or JSON) document::

    schema: 1
    base_stations:
      - {bs_id: 1, seed: 101}
      - {bs_id: 2, seed: 102, scene: {n_vehicles: 8}}
    splits: {train: 800, val1: 200, val2: 400}
    frame_dt_s: 0.3
    scene: {...}     # SceneConfig defaults shared by every BS
    channel: {...}   # PathLossParams
    features: {...}  # FeatureConfig
    net: {...}       # NetConfig
    train: {...}     # TrainConfig
    adapt: {...}     # AdaptConfig
    pac: {...}       # FiniteClassSpec
    shifts: {name: ShiftProfile fields}

Named scenarios (``config/scenarios.yaml``) are layered on top and pick the
requesting and donor BSs of an adaptation experiment.
"""

import copy
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .adapt import (ADAPT_COLUMNS, BUDGET_COLUMNS, AdaptConfig, Donor,
                    adaptation_budget_sweep, collect_feature_stats, detect_shift,
                    efficiency_summary, holdout_split, run_adaptation_comparison)
from .channel import PathLossParams
from .dataset import SPLITS, generate_frames, load_split, write_split
from .errors import ConfigurationError, DatasetMissingError, UsageError
from .features import FeatureConfig
from .net import ModelSnapshot, NetConfig, restore, snapshot
from .pac import FiniteClassSpec, monte_carlo_verify
from .scene_builder import SceneConfig, ShiftProfile, generate_scene
from .settings import build_config, config_to_dict, derive_seed, unknown_keys
from .trainer import (SWEEP_COLUMNS, TRAIN_COLUMNS, EvalReport, TrainConfig,
                      crossover_fractions, evaluate, median_table, predict,
                      relative_improvement, sample_efficiency_sweep, split_holdout, train)
from utils import FileManager, get_logger

logger = get_logger("experiment")

CONFIG_SCHEMA = 1
REPO_ROOT = Path(__file__).resolve().parents[3]
DEFAULT_CONFIG = REPO_ROOT / "config" / "experiment.yaml"
DEFAULT_SCENARIOS = REPO_ROOT / "config" / "scenarios.yaml"
THREADS_ENV = "RSSGEN_THREADS"

SECTIONS = {
    "scene": SceneConfig,
    "channel": PathLossParams,
    "features": FeatureConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "adapt": AdaptConfig,
    "pac": FiniteClassSpec,
}
TOP_LEVEL_KEYS = ("schema", "base_stations", "splits", "frame_dt_s", "shifts",
                  "threads") + tuple(SECTIONS)
DEFAULT_SPLIT_SHIFTS = {"val1": "val1_buses", "val2": "val2_noise"}
SCENARIO_KEYS = ("description", "requesters", "donors", "split", "train_shifts",
                 "split_shifts", "overrides")
ROBUSTNESS_COLUMNS = ("bs_id", "method", "seed", "split", "mae", "rmse", "mae_los",
                      "mae_nlos", "rmse_los", "rmse_nlos")
IMPROVEMENT_COLUMNS = ("bs_id", "split", "baseline", "mae_pct", "rmse_pct")


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values of ``override`` win, lists are replaced."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class BaseStationSpec:
    bs_id: int
    scene: SceneConfig
    train_shift: Optional[str] = None
    split_shifts: Tuple[Tuple[str, str], ...] = tuple(DEFAULT_SPLIT_SHIFTS.items())

    def shift_for(self, split: str) -> Optional[str]:
        if split == "train":
            return self.train_shift
        return dict(self.split_shifts).get(split)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    requesters: Tuple[int, ...]
    donors: Tuple[int, ...] = ()
    split: str = "val1"
    description: str = ""
    train_shifts: Tuple[Tuple[int, str], ...] = ()
    split_shifts: Tuple[Tuple[int, str, str], ...] = ()

    def donors_for(self, requester: int, all_ids: Sequence[int]) -> List[int]:
        pool = self.donors or tuple(all_ids)
        return [b for b in pool if b != requester]


def load_scenario(name: str, path: Optional[Path] = None) -> Tuple[ScenarioSpec, Dict[str, Any]]:
    """
    Load a named scenario preset.

    Returns:
        (ScenarioSpec, config overrides to deep-merge)

    Raises:
        UsageError: If the scenario is not defined
        ConfigurationError: If the preset has unknown keys
    """
    path = Path(path or DEFAULT_SCENARIOS)
    with open(path, "r") as f:
        presets = yaml.safe_load(f) or {}
    scenarios = presets.get("scenarios", {})
    if name not in scenarios:
        raise UsageError(f"Scenario '{name}' not found in {path}")

    data = scenarios[name]
    extra = unknown_keys(data, SCENARIO_KEYS)
    if extra:
        raise ConfigurationError(f"Unknown keys in scenario '{name}': {', '.join(extra)}")
    if not data.get("requesters"):
        raise ConfigurationError(f"Scenario '{name}' names no requesting BS")

    split_shifts = []
    for bs_id, per_split in sorted((data.get("split_shifts") or {}).items()):
        for split, profile in sorted(per_split.items()):
            split_shifts.append((int(bs_id), split, profile))
    spec = ScenarioSpec(
        name=name,
        requesters=tuple(int(b) for b in data["requesters"]),
        donors=tuple(int(b) for b in data.get("donors") or ()),
        split=data.get("split", "val1"),
        description=data.get("description", ""),
        train_shifts=tuple(sorted((int(b), p) for b, p in (data.get("train_shifts") or {}).items())),
        split_shifts=tuple(split_shifts),
    )
    return spec, data.get("overrides") or {}


class ExperimentConfig:
    """
    Fully resolved experiment definition.

    Loads the YAML document, applies an optional scenario and seed override,
    builds one frozen config per section and computes the config hash that
    every output carries.
    """

    def __init__(self, data: Dict[str, Any], scenario: Optional[ScenarioSpec] = None,
                 seed: Optional[int] = None):
        extra = unknown_keys(data, TOP_LEVEL_KEYS)
        if extra:
            raise ConfigurationError(f"Unknown top-level keys: {', '.join(extra)}")
        if data.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
            raise ConfigurationError(f"Unsupported config schema: {data.get('schema')}")

        self.scenario = scenario
        self.seed_override = seed
        sections = dict(data)
        if seed is not None:
            sections["train"] = {**(sections.get("train") or {}), "seeds": [int(seed)]}

        self.channel: PathLossParams = build_config(PathLossParams, sections.get("channel"), "channel")
        self.features: FeatureConfig = build_config(FeatureConfig, sections.get("features"), "features")
        self.net: NetConfig = build_config(NetConfig, sections.get("net"), "net")
        self.train: TrainConfig = build_config(TrainConfig, sections.get("train"), "train")
        self.adapt: AdaptConfig = build_config(AdaptConfig, sections.get("adapt"), "adapt")
        self.pac: FiniteClassSpec = build_config(FiniteClassSpec, sections.get("pac"), "pac")
        self.shifts: Dict[str, ShiftProfile] = {
            name: build_config(ShiftProfile, profile, f"shifts.{name}")
            for name, profile in sorted((data.get("shifts") or {}).items())
        }
        self.splits: Dict[str, int] = self._parse_splits(data.get("splits"))
        self.frame_dt_s = float(data.get("frame_dt_s", 0.3))
        self.threads: Optional[int] = data.get("threads")
        self.base_stations = self._parse_base_stations(data, sections.get("scene") or {})

        errors = self.validate()
        if errors:
            raise ConfigurationError("Invalid experiment config: " + "; ".join(errors))

    @classmethod
    def load(cls, path: Optional[str] = None, scenario: Optional[str] = None,
             seed: Optional[int] = None, scenarios_path: Optional[str] = None) -> "ExperimentConfig":
        """
        Load a definition file.

        Args:
            path: YAML/JSON definition (defaults to config/experiment.yaml)
            scenario: Optional scenario preset name
            seed: Optional seed override
            scenarios_path: Scenario preset file
        """
        path = Path(path or DEFAULT_CONFIG)
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} does not hold a mapping")
        spec = None
        if scenario:
            spec, overrides = load_scenario(scenario, scenarios_path)
            data = deep_merge(data, overrides)
        return cls(data, scenario=spec, seed=seed)

    @staticmethod
    def _parse_splits(data: Optional[Dict[str, Any]]) -> Dict[str, int]:
        splits = {"train": 800, "val1": 200, "val2": 400}
        extra = unknown_keys(data or {}, SPLITS)
        if extra:
            raise ConfigurationError(f"Unknown keys in 'splits': {', '.join(extra)}")
        splits.update({k: int(v) for k, v in (data or {}).items()})
        return splits

    def _parse_base_stations(self, data: Dict[str, Any], scene_defaults: Dict[str, Any]):
        entries = data.get("base_stations") or [{"bs_id": k, "seed": 100 + k} for k in range(1, 6)]
        offset = self.seed_override or 0
        train_shifts = dict(self.scenario.train_shifts) if self.scenario else {}
        scenario_splits = self.scenario.split_shifts if self.scenario else ()

        stations = []
        for entry in entries:
            extra = unknown_keys(entry, ("bs_id", "seed", "scene", "train_shift", "split_shifts"))
            if extra:
                raise ConfigurationError(f"Unknown keys in base_stations entry: {', '.join(extra)}")
            bs_id = int(entry["bs_id"])
            scene_data = {**scene_defaults, **(entry.get("scene") or {}),
                          "seed": int(entry.get("seed", bs_id)) + offset}
            split_shifts = {**DEFAULT_SPLIT_SHIFTS, **(entry.get("split_shifts") or {})}
            split_shifts.update({s: p for b, s, p in scenario_splits if b == bs_id})
            stations.append(BaseStationSpec(
                bs_id=bs_id,
                scene=build_config(SceneConfig, scene_data, f"base_stations[{bs_id}].scene"),
                train_shift=train_shifts.get(bs_id, entry.get("train_shift")),
                split_shifts=tuple(sorted(split_shifts.items())),
            ))
        return stations

    def validate(self) -> List[str]:
        """
        Cross-section checks.

        Returns:
            List of validation errors (empty if valid)
        """
        errors = []
        ids = [bs.bs_id for bs in self.base_stations]
        if not ids:
            errors.append("No base stations defined")
        if len(set(ids)) != len(ids):
            errors.append("Duplicate bs_id in base_stations")

        for bs in self.base_stations:
            for split in SPLITS:
                name = bs.shift_for(split)
                if name and name not in self.shifts:
                    errors.append(f"BS {bs.bs_id}: unknown shift profile '{name}' for {split}")
        if any(count < 1 for count in self.splits.values()):
            errors.append("Every split needs at least one frame")
        if self.frame_dt_s < 0:
            errors.append("frame_dt_s must be non-negative")
        if self.threads is not None and int(self.threads) < 1:
            errors.append("threads must be at least 1")

        if self.scenario:
            for bs_id in self.scenario.requesters + self.scenario.donors:
                if bs_id not in ids:
                    errors.append(f"Scenario '{self.scenario.name}' names unknown BS {bs_id}")
            if self.scenario.split not in SPLITS:
                errors.append(f"Scenario split must be one of {SPLITS}")
        return errors

    def station(self, bs_id: int) -> BaseStationSpec:
        for bs in self.base_stations:
            if bs.bs_id == bs_id:
                return bs
        raise UsageError(f"Unknown BS {bs_id}")

    def to_dict(self) -> Dict[str, Any]:
        """Resolved definition; the worker count is left out so it never changes outputs."""
        resolved = {
            "schema": CONFIG_SCHEMA,
            "base_stations": [{
                "bs_id": bs.bs_id,
                "scene": config_to_dict(bs.scene),
                "train_shift": bs.train_shift,
                "split_shifts": dict(bs.split_shifts),
            } for bs in self.base_stations],
            "splits": self.splits,
            "frame_dt_s": self.frame_dt_s,
            "shifts": {name: config_to_dict(p) for name, p in self.shifts.items()},
            "scenario": config_to_dict(self.scenario) if self.scenario else None,
        }
        for name in SECTIONS:
            if name != "scene":
                resolved[name] = config_to_dict(getattr(self, name))
        return resolved

    @property
    def config_hash(self) -> str:
        return FileManager.content_hash(self.to_dict())

    def worker_count(self) -> int:
        limit = int(self.threads or len(self.base_stations))
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                limit = min(limit, int(env))
            except ValueError:
                raise ConfigurationError(f"{THREADS_ENV} must be an integer, got '{env}'")
        return max(1, limit)

    def __repr__(self):
        scenario = f", scenario='{self.scenario.name}'" if self.scenario else ""
        return f"ExperimentConfig({len(self.base_stations)} BSs, hash={self.config_hash}{scenario})"


class OutputLayout:
    """Directory layout of one experiment output tree."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.data = self.root / "data"
        self.models = self.root / "models"
        self.metrics = self.root / "metrics"
        self.plots = self.root / "plots"
        self.pac = self.root / "pac"

    def setup_output_directories(self):
        for directory in (self.data, self.models, self.metrics, self.plots, self.pac):
            FileManager.ensure_directory(directory)

    def model_path(self, bs_id: int, method: str) -> Path:
        return self.models / f"bs{bs_id}_{method}.rsw"


def run_per_bs(job: Callable[[BaseStationSpec], Any], stations: Sequence[BaseStationSpec],
               workers: int) -> List[Any]:
    """Run one job per BS on a thread pool; results come back in BS order."""
    ordered = sorted(stations, key=lambda bs: bs.bs_id)
    if workers <= 1 or len(ordered) <= 1:
        return [job(bs) for bs in ordered]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, ordered))


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[Dict[str, Any]],
               config_hash: str) -> Path:
    tagged = [{**row, "config_hash": config_hash} for row in rows]
    return FileManager.write_csv(path, tuple(columns) + ("config_hash",), tagged)


def plot_data(figure: str, x_label: str, y_label: str, series: List[Dict[str, Any]],
              config_hash: str, **extra) -> Dict[str, Any]:
    """Data-only figure: labelled x/y series, ready for any plotting tool."""
    return {"figure": figure, "x_label": x_label, "y_label": y_label,
            "series": series, "config_hash": config_hash, **extra}


# -- gen ---------------------------------------------------------------------

def cmd_gen(config: ExperimentConfig, out_dir) -> Dict[str, Any]:
    """
    Generate the train/VAL-1/VAL-2 JSON-lines files of every BS.

    Returns:
        Manifest with the written files and record counts
    """
    layout = OutputLayout(out_dir)
    layout.setup_output_directories()
    config_hash = config.config_hash

    def job(bs: BaseStationSpec):
        written = []
        for index, split in enumerate(SPLITS):
            scene_cfg = replace(bs.scene, seed=derive_seed(bs.scene.seed, index))
            profile_name = bs.shift_for(split)
            profile = config.shifts[profile_name] if profile_name else None
            frames = generate_frames(generate_scene(scene_cfg), config.splits[split],
                                     config.frame_dt_s, derive_seed(bs.scene.seed, index, 1),
                                     config.channel, config.features, profile)
            path, count = write_split(layout.data, bs.bs_id, split, frames, config_hash)
            logger.info(f"BS {bs.bs_id} {split}: {count} frames -> {path.name}"
                        + (f" (shift '{profile_name}')" if profile_name else ""))
            written.append({"bs_id": bs.bs_id, "split": split, "path": path.name,
                            "records": count, "shift": profile_name})
        return written

    files = [entry for per_bs in run_per_bs(job, config.base_stations, config.worker_count())
             for entry in per_bs]
    manifest = {"config_hash": config_hash, "files": files, "config": config.to_dict()}
    FileManager.write_json(layout.data / "manifest.json", manifest)
    return manifest


def load_station_splits(config: ExperimentConfig, layout: OutputLayout, bs_id: int,
                        splits: Sequence[str] = SPLITS):
    return {split: load_split(layout.data, bs_id, split, config.features, config.config_hash)
            for split in splits}


# -- train -------------------------------------------------------------------

def save_model(layout: OutputLayout, model, metadata: Dict[str, Any]) -> Path:
    path = layout.model_path(metadata["bs_id"], metadata["method"])
    FileManager.ensure_directory(path.parent)
    path.write_bytes(snapshot(model, metadata).to_bytes())
    return path


def load_snapshot(layout: OutputLayout, bs_id: int, method: str, config_hash: str) -> ModelSnapshot:
    """
    Raises:
        DatasetMissingError: If the model was not trained under this config
    """
    path = layout.model_path(bs_id, method)
    if not path.exists():
        raise DatasetMissingError(path, hint="run train first")
    snap = ModelSnapshot.from_bytes(path.read_bytes())
    if snap.metadata.get("config_hash") != config_hash:
        raise DatasetMissingError(path, hint="trained under another config; run train first")
    return snap


def _median_report(reports: Sequence[EvalReport]) -> EvalReport:
    return EvalReport(split=reports[0].split,
                      mae_dbm=float(np.median([r.mae_dbm for r in reports])),
                      rmse_dbm=float(np.median([r.rmse_dbm for r in reports])))


def cmd_train(config: ExperimentConfig, out_dir) -> Dict[str, Any]:
    """
    Train every configured method and seed on every BS.

    Writes per-epoch metrics, final VAL scores, snapshots of the first seed,
    relative improvements and the shift-robustness and RSS-map plot data.
    The last ``train.holdout_fraction`` of the train split is held out; its
    RMSE is stored as ``val_rmse``, the shift detector reference.
    """
    layout = OutputLayout(out_dir)
    layout.setup_output_directories()
    config_hash = config.config_hash
    tcfg = config.train

    def job(bs: BaseStationSpec):
        data = load_station_splits(config, layout, bs.bs_id)
        fit, holdout = split_holdout(data["train"], tcfg.holdout_fraction)
        vals = [data["val1"], data["val2"]]
        epoch_rows, final_rows, finals, models = [], [], {}, {}
        for method in tcfg.methods:
            for seed in tcfg.seeds:
                result = train(bs.bs_id, fit, tcfg, config.net, seed=seed,
                               method=method, val_sets=vals)
                epoch_rows.extend(result.rows)
                for val in vals:
                    report = evaluate(result.model, val, method, tcfg.eval_batch)
                    finals.setdefault((method, val.split), []).append(report)
                    final_rows.append({
                        "bs_id": bs.bs_id, "method": method, "seed": seed, "split": val.split,
                        "mae": report.mae_dbm, "rmse": report.rmse_dbm,
                        "mae_los": report.mae_los, "mae_nlos": report.mae_nlos,
                        "rmse_los": report.rmse_los, "rmse_nlos": report.rmse_nlos,
                    })
                if seed == tcfg.seeds[0]:
                    models[method] = result.model
                    train_report = evaluate(result.model, fit, method, tcfg.eval_batch)
                    val_report = (evaluate(result.model, holdout, method, tcfg.eval_batch)
                                  if holdout is not None else train_report)
                    save_model(layout, result.model, {
                        "bs_id": bs.bs_id, "method": method, "seed": seed,
                        "config_hash": config_hash,
                        "train_rmse": train_report.rmse_dbm,
                        "val_rmse": val_report.rmse_dbm,
                        "feature_stats": collect_feature_stats(result.model, fit).to_dict(),
                    })

        write_rows(layout.metrics / f"train_bs{bs.bs_id}.csv", TRAIN_COLUMNS, epoch_rows, config_hash)

        improvements = []
        for split in ("val1", "val2"):
            if ("physics", split) not in finals:
                continue
            ours = _median_report(finals[("physics", split)])
            for method in tcfg.methods:
                if method == "physics":
                    continue
                gains = relative_improvement(ours, _median_report(finals[(method, split)]))
                improvements.append({"bs_id": bs.bs_id, "split": split, "baseline": method, **gains})

        rss_map = None
        if "physics" in models and "baseline1" in models:
            frame = data["val1"].head(1)
            shape = (bs.scene.grid_nx, bs.scene.grid_ny)
            rss_map = {
                "bs_id": bs.bs_id,
                "frame_id": int(frame.frame_ids[0]),
                "true": frame.rss[0].reshape(shape).tolist(),
                "physics": predict(models["physics"], frame, "physics")[0].reshape(shape).tolist(),
                "baseline1": predict(models["baseline1"], frame, "baseline1")[0].reshape(shape).tolist(),
                "nlos_mask": (~frame.los_mask[0]).reshape(shape).astype(int).tolist(),
            }
        return final_rows, improvements, rss_map

    results = run_per_bs(job, config.base_stations, config.worker_count())
    final_rows = [row for rows, _, _ in results for row in rows]
    improvements = [row for _, rows, _ in results for row in rows]
    maps = [m for _, _, m in results if m is not None]

    FileManager.merge_csv([layout.metrics / f"train_bs{bs.bs_id}.csv"
                           for bs in sorted(config.base_stations, key=lambda b: b.bs_id)],
                          layout.metrics / "train.csv")
    write_rows(layout.metrics / "shift_robustness.csv", ROBUSTNESS_COLUMNS, final_rows, config_hash)
    write_rows(layout.metrics / "relative_improvement.csv", IMPROVEMENT_COLUMNS, improvements,
               config_hash)

    medians = median_table(final_rows)
    series = []
    for method in tcfg.methods:
        for split in ("val1", "val2"):
            points = sorted((bs, value) for (bs, m, s, _), value in medians.items()
                            if m == method and s == split)
            series.append({"label": f"{method} {split}", "x": [p[0] for p in points],
                           "y": [p[1] for p in points]})
    FileManager.write_json(layout.plots / "shift_robustness.json",
                           plot_data("shift_robustness", "bs_id", "MAE (dB)", series, config_hash))
    FileManager.write_json(layout.plots / "rss_maps.json",
                           plot_data("rss_maps", "x cell", "y cell", [], config_hash, maps=maps))
    logger.info(f"Trained {len(config.base_stations)} BSs x {len(tcfg.methods)} methods "
                f"x {len(tcfg.seeds)} seeds")
    return {"config_hash": config_hash, "final": final_rows, "improvements": improvements}


# -- sweep -------------------------------------------------------------------

def cmd_sweep(config: ExperimentConfig, out_dir,
              fractions: Sequence[float] = (0.125, 0.25, 0.5, 1.0),
              lams: Optional[Sequence[float]] = None) -> Dict[str, Any]:
    """
    Training-size sweep; emits the sample-efficiency table and plot data.

    The physics method runs once per weight in ``lams`` (default
    ``train.sweep_lams``, or ``train.lam`` when that is empty) and gets one
    series and one crossover entry per weight.
    """
    layout = OutputLayout(out_dir)
    layout.setup_output_directories()
    config_hash = config.config_hash
    tcfg = config.train
    lams = tuple(lams) if lams else tcfg.lams

    def job(bs: BaseStationSpec):
        data = load_station_splits(config, layout, bs.bs_id)
        fit, _ = split_holdout(data["train"], tcfg.holdout_fraction)
        rows = sample_efficiency_sweep(bs.bs_id, fit, [data["val1"], data["val2"]],
                                       fractions, tcfg.methods, tcfg.seeds, tcfg, config.net,
                                       lams)
        write_rows(layout.metrics / f"sweep_bs{bs.bs_id}.csv", SWEEP_COLUMNS, rows, config_hash)
        return rows

    rows = [row for per_bs in run_per_bs(job, config.base_stations, config.worker_count())
            for row in per_bs]
    FileManager.merge_csv([layout.metrics / f"sweep_bs{bs.bs_id}.csv"
                           for bs in sorted(config.base_stations, key=lambda b: b.bs_id)],
                          layout.metrics / "sweep.csv")

    series = []
    for method, lam in sorted({(row["method"], row["lam"]) for row in rows}):
        medians = median_table(r for r in rows if (r["method"], r["lam"]) == (method, lam))
        name = f"{method} lam={lam:g}" if method == "physics" else method
        for (bs_id, split) in sorted({(k[0], k[2]) for k in medians}):
            points = sorted((f, v) for (b, _, s, f), v in medians.items()
                            if (b, s) == (bs_id, split))
            series.append({"label": f"BS {bs_id} {name} {split}", "lam": lam,
                           "x": [p[0] for p in points], "y": [p[1] for p in points]})
    crossovers = [{"bs_id": bs_id, "split": split, "lam": lam, "fraction": fraction}
                  for lam in lams
                  for (bs_id, split), fraction in crossover_fractions(rows, lam=lam).items()]
    FileManager.write_json(layout.plots / "sample_efficiency.json",
                           plot_data("sample_efficiency", "training fraction", "median MAE (dB)",
                                     series, config_hash, crossovers=crossovers))
    return {"config_hash": config_hash, "rows": rows, "crossovers": crossovers}


# -- adapt -------------------------------------------------------------------

def cmd_adapt(config: ExperimentConfig, out_dir, force_shift: bool = True,
              budgets: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    """
    Run the configured adaptation scenario for every requesting BS.

    The first ``max(adapt.samples, *budgets)`` frames of the shifted split
    are the adaptation pool; every method and budget takes its prefix of
    that pool, and only the frames after it are scored.

    Raises:
        UsageError: If no scenario is configured or the shifted split
            leaves no frame to score
    """
    if config.scenario is None:
        raise UsageError("cmd_adapt needs a scenario (--scenario NAME)")
    layout = OutputLayout(out_dir)
    layout.setup_output_directories()
    config_hash = config.config_hash
    scenario, acfg = config.scenario, config.adapt
    all_ids = [bs.bs_id for bs in config.base_stations]
    reserve = max([acfg.samples, *(budgets or [])])

    rows, budget_rows, curves, summaries = [], [], [], []
    for bs_id in scenario.requesters:
        shifted = load_split(layout.data, bs_id, scenario.split, config.features, config_hash)
        pool, eval_set = holdout_split(shifted, reserve)

        requester = load_snapshot(layout, bs_id, "physics", config_hash)
        donors = [Donor(bs_id=d, snapshot=load_snapshot(layout, d, "physics", config_hash))
                  for d in scenario.donors_for(bs_id, all_ids)]

        reference = float(requester.metadata.get("val_rmse", 0.0)) or 1.0
        if not detect_shift(restore(requester), shifted, reference, acfg, force=force_shift):
            logger.info(f"BS {bs_id}: no domain shift detected, skipping adaptation")
            continue

        reports = run_adaptation_comparison(bs_id, requester, donors, pool, acfg, eval_set)
        for method, report in reports.items():
            rows.extend(report.rows)
            curves.append({"label": f"BS {bs_id} {method}",
                           "x": [r["samples_used"] for r in report.rows],
                           "y": [r["rmse"] for r in report.rows],
                           "flops": [r["flops"] for r in report.rows]})
        summaries.append(efficiency_summary(reports))

        if budgets:
            sweep_rows, crossover = adaptation_budget_sweep(bs_id, requester, donors, pool,
                                                            acfg, eval_set, budgets)
            budget_rows.extend(sweep_rows)
            summaries[-1]["budget_crossover"] = crossover

    write_rows(layout.metrics / f"adapt_{scenario.name}.csv", ADAPT_COLUMNS, rows, config_hash)
    FileManager.write_json(layout.plots / f"adaptation_curves_{scenario.name}.json",
                           plot_data("adaptation_curves", "samples used", "RMSE (dB)", curves,
                                     config_hash, scenario=scenario.name, summary=summaries))
    if budgets:
        write_rows(layout.metrics / f"adapt_budget_{scenario.name}.csv", BUDGET_COLUMNS,
                   budget_rows, config_hash)
        series = []
        for label in sorted({(r["bs_id"], r["method"]) for r in budget_rows}):
            points = [r for r in budget_rows if (r["bs_id"], r["method"]) == label]
            series.append({"label": f"BS {label[0]} {label[1]}",
                           "x": [r["budget"] for r in points], "y": [r["rmse"] for r in points]})
        FileManager.write_json(layout.plots / f"adaptation_budget_{scenario.name}.json",
                               plot_data("adaptation_budget", "adaptation samples",
                                         "final RMSE (dB)", series, config_hash,
                                         scenario=scenario.name))
    return {"config_hash": config_hash, "rows": rows, "summary": summaries}


# -- pac ---------------------------------------------------------------------

def cmd_pac(config: ExperimentConfig, out_dir, random_configs: int = 0) -> Dict[str, Any]:
    """
    Verify the sample-complexity bound on the configured planted class,
    optionally repeated over random planted configurations.
    """
    layout = OutputLayout(out_dir)
    layout.setup_output_directories()
    config_hash = config.config_hash

    report = monte_carlo_verify(config.pac).to_dict()
    sweep = []
    for k in range(random_configs):
        spec = FiniteClassSpec.random(derive_seed(config.pac.seed, 100, k),
                                      n_cells=config.pac.n_cells, family=config.pac.family,
                                      eps0=config.pac.eps0, eps1=config.pac.eps1,
                                      delta=config.pac.delta, trials=config.pac.trials,
                                      progress=False)
        sweep.append(monte_carlo_verify(spec).to_dict())

    result = {"config_hash": config_hash, "schema": CONFIG_SCHEMA, "verification": report,
              "random_configs": sweep}
    FileManager.write_json(layout.pac / "verification.json", result)
    return result
