"""
Collaborative domain adaptation between base stations.

A BS that sees a domain shift collects snapshots from the other BSs, runs
each donor's encoder on its new data, compares the resulting fused-feature
statistics with the donor's home statistics (Wasserstein-2 between diagonal
Gaussians), aggregates the donors with softmax(1 / W) weights and finally
fine-tunes the aggregate on the new data with the physics loss.

The fine-tuning, fine-tuning without the physics term, and uniform-average
(FedAvg-style) baselines share the same fine-tuning loop.
"""

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .dataset import RssDataset
from .errors import ContractError, UsageError
from .net import Model, ModelSnapshot, encode, inference_flops, restore, snapshot
from .settings import derive_seed
from .trainer import OPTIMIZERS, Optimizer, evaluate, predict, run_epoch
from utils import get_logger

logger = get_logger("adapt")

ADAPT_METHODS = ("proposed", "finetune", "finetune_no_phy", "averaged")
ADAPT_COLUMNS = ("bs_id", "method", "samples_used", "epoch", "rmse", "mae", "flops",
                 "bytes_exchanged", "gamma_json")
BUDGET_COLUMNS = ("bs_id", "method", "budget", "rmse", "mae", "flops", "bytes_exchanged")


@dataclass(frozen=True)
class FeatureStats:
    """Running mean and (population) variance of fused features."""

    mu: np.ndarray
    m2: np.ndarray
    count: int

    @classmethod
    def empty(cls, dim: int) -> "FeatureStats":
        return cls(mu=np.zeros(dim), m2=np.zeros(dim), count=0)

    @classmethod
    def from_moments(cls, mu: Sequence[float], var: Sequence[float], count: int) -> "FeatureStats":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        var = np.atleast_1d(np.asarray(var, dtype=float))
        return cls(mu=mu, m2=var * count, count=int(count))

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    @property
    def sigma_diag(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.m2)
        return self.m2 / self.count

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Pairwise combination of two partial aggregates."""
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        if other.dim != self.dim:
            raise ContractError(f"Cannot merge stats of dimension {self.dim} and {other.dim}")
        n = self.count + other.count
        delta = other.mu - self.mu
        mu = self.mu + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        return FeatureStats(mu=mu, m2=m2, count=n)

    def to_dict(self) -> Dict[str, Any]:
        return {"mu": self.mu.tolist(), "m2": self.m2.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureStats":
        return cls(mu=np.asarray(data["mu"], dtype=float),
                   m2=np.asarray(data["m2"], dtype=float), count=int(data["count"]))


@dataclass(frozen=True)
class AggregationWeights:
    gamma: np.ndarray

    def __len__(self) -> int:
        return int(self.gamma.shape[0])

    def to_json(self) -> str:
        return json.dumps([float(g) for g in self.gamma])


def update_stats(stats: FeatureStats, batch: np.ndarray) -> FeatureStats:
    """
    Fold a batch of fused features into running statistics.

    The batch moments are computed in two passes and merged with the
    running aggregate, so the result does not depend on how the samples
    were split into batches (up to rounding).

    Raises:
        UsageError: If the batch is empty
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise UsageError("update_stats needs a non-empty batch")
    mean = batch.mean(axis=0)
    part = FeatureStats(mu=mean, m2=((batch - mean) ** 2).sum(axis=0), count=batch.shape[0])
    return stats.merge(part)


def collect_feature_stats(model: Model, dataset: RssDataset, batch: int = 256) -> FeatureStats:
    """Fused-feature statistics of ``model``'s encoder over every frame of ``dataset``."""
    stats = FeatureStats.empty(model.config.fused_dim)
    for start in range(0, len(dataset), batch):
        idx = np.arange(start, min(start + batch, len(dataset)))
        stats = update_stats(stats, encode(model, dataset.batch_inputs(idx)))
    return stats


def w2_distance(a: FeatureStats, b: FeatureStats) -> float:
    """
    Wasserstein-2 distance between two diagonal Gaussians.

    Raises:
        ContractError: On negative variances, mismatched dimensions or
            statistics built from fewer than two samples
    """
    if a.dim != b.dim:
        raise ContractError(f"Stats dimensions differ: {a.dim} vs {b.dim}")
    if a.count < 2 or b.count < 2:
        raise ContractError("w2_distance needs stats accumulated over at least 2 samples")
    var_a, var_b = a.sigma_diag, b.sigma_diag
    if np.any(var_a < 0) or np.any(var_b < 0):
        raise ContractError("Negative variance in feature statistics")
    w2_sq = np.sum((a.mu - b.mu) ** 2) + np.sum((np.sqrt(var_a) - np.sqrt(var_b)) ** 2)
    return float(np.sqrt(w2_sq))


def similarity_weights(distances: Sequence[float], eps: float = 1e-6) -> AggregationWeights:
    """Softmax of inverse distances, floored at ``eps``."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise UsageError("similarity_weights needs at least one distance")
    if np.any(d < 0):
        raise ContractError("Distances must be non-negative")
    logits = 1.0 / np.maximum(d, eps)
    z = np.exp(logits - logits.max())
    return AggregationWeights(gamma=z / z.sum())


def _check_architectures(snapshots: Sequence[ModelSnapshot]):
    reference = snapshots[0]
    for snap in snapshots[1:]:
        if snap.architecture() != reference.architecture() or snap.net_config != reference.net_config:
            raise ContractError("Cannot aggregate snapshots with different architectures")


def aggregate(snapshots: Sequence[ModelSnapshot], gamma) -> Model:
    """
    Convex combination of donor parameters.

    Args:
        snapshots: Donor snapshots (the requester is not among them unless
            self-weighting is enabled)
        gamma: AggregationWeights or a weight sequence of the same length

    Raises:
        ContractError: On architecture or length mismatch
    """
    weights = gamma.gamma if isinstance(gamma, AggregationWeights) else np.asarray(gamma, dtype=float)
    if not snapshots:
        raise ContractError("aggregate needs at least one snapshot")
    if len(snapshots) != len(weights):
        raise ContractError(f"{len(snapshots)} snapshots but {len(weights)} weights")
    _check_architectures(snapshots)

    vector = np.zeros_like(snapshots[0].vector)
    for snap, weight in zip(snapshots, weights):
        vector = vector + weight * snap.vector
    return restore(snapshots[0], vector)


def average_snapshots(snapshots: Sequence[ModelSnapshot]) -> Model:
    """Uniform average (the FedAvg-style baseline)."""
    if not snapshots:
        raise ContractError("average_snapshots needs at least one snapshot")
    return aggregate(snapshots, np.full(len(snapshots), 1.0 / len(snapshots)))


@dataclass(frozen=True)
class Donor:
    """A snapshot shipped by another BS together with its home statistics."""

    bs_id: int
    snapshot: ModelSnapshot

    @property
    def stats(self) -> FeatureStats:
        data = self.snapshot.metadata.get("feature_stats")
        if data is None:
            raise ContractError(f"Snapshot of BS {self.bs_id} carries no feature statistics")
        return FeatureStats.from_dict(data)

    @classmethod
    def from_model(cls, bs_id: int, model: Model, home: RssDataset) -> "Donor":
        stats = collect_feature_stats(model, home)
        return cls(bs_id=bs_id, snapshot=snapshot(model, {"bs_id": bs_id,
                                                          "feature_stats": stats.to_dict()}))


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch: int = 16
    lam: float = 0.5
    optimizer: str = "adam"
    clip_norm: float = 1.0
    samples: int = 50
    budgets: Tuple[int, ...] = (12, 25, 50, 100)
    include_self: bool = False
    eps: float = 1e-6
    rmse_factor: float = 1.5
    window: int = 20
    seed: int = 0
    progress: bool = True

    def validate(self) -> List[str]:
        errors = []
        if self.epochs < 0:
            errors.append("epochs must be non-negative")
        if self.lr < 0:
            errors.append("lr must be non-negative")
        if self.batch < 1:
            errors.append("batch must be at least 1")
        if self.lam < 0:
            errors.append("lam must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            errors.append(f"optimizer must be one of {OPTIMIZERS}")
        if self.clip_norm <= 0:
            errors.append("clip_norm must be strictly positive")
        if self.samples < 2:
            errors.append("samples must be at least 2")
        if any(b < 2 for b in self.budgets):
            errors.append("every budget must be at least 2")
        if self.eps <= 0:
            errors.append("eps must be strictly positive")
        if self.rmse_factor <= 0:
            errors.append("rmse_factor must be strictly positive")
        if self.window < 1:
            errors.append("window must be at least 1")
        return errors


@dataclass
class AdaptationReport:
    bs_id: int
    method: str
    gamma: Tuple[float, ...] = ()
    donor_ids: Tuple[int, ...] = ()
    bytes_exchanged: int = 0
    rows: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def final_rmse(self) -> float:
        return self.rows[-1]["rmse"] if self.rows else float("nan")

    @property
    def total_flops(self) -> int:
        return self.rows[-1]["flops"] if self.rows else 0

    def first_reaching(self, target_rmse: float) -> Optional[Dict[str, Any]]:
        """First logged row whose RMSE is at or below ``target_rmse``."""
        return next((row for row in self.rows if row["rmse"] <= target_rmse), None)


class ShiftDetector:
    """
    Rolling-window trigger for adaptation.

    Fires when the RMSE over the last ``window`` frames exceeds
    ``factor`` times the validation RMSE recorded after training, or
    immediately when forced.
    """

    def __init__(self, reference_rmse: float, factor: float = 1.5, window: int = 20,
                 force: bool = False):
        if reference_rmse <= 0:
            raise UsageError("reference_rmse must be strictly positive")
        self.reference_rmse = reference_rmse
        self.factor = factor
        self.window = window
        self.force = force
        self._errors: List[float] = []

    @property
    def rolling_rmse(self) -> float:
        if not self._errors:
            return float("nan")
        return float(np.sqrt(np.mean(self._errors[-self.window:])))

    def observe(self, rss_hat: np.ndarray, rss: np.ndarray) -> bool:
        """Record one frame's squared error and report whether a shift is detected."""
        self._errors.append(float(np.mean((np.asarray(rss_hat) - np.asarray(rss)) ** 2)))
        return self.triggered

    @property
    def triggered(self) -> bool:
        if self.force:
            return True
        if len(self._errors) < self.window:
            return False
        return self.rolling_rmse > self.factor * self.reference_rmse


def detect_shift(model: Model, frames: RssDataset, reference_rmse: float,
                 acfg: AdaptConfig, force: bool = False) -> bool:
    """Stream ``frames`` through a ShiftDetector; True as soon as it fires."""
    detector = ShiftDetector(reference_rmse, acfg.rmse_factor, acfg.window, force)
    if detector.triggered:
        return True
    predicted = predict(model, frames)
    for t in range(len(frames)):
        if detector.observe(predicted[t], frames.rss[t]):
            logger.info(f"Shift detected after {t + 1} frames "
                        f"(rolling RMSE {detector.rolling_rmse:.2f} dB)")
            return True
    return False


def _fine_tune(bs_id: int, method: str, model: Model, adapt_set: RssDataset,
               eval_set: RssDataset, acfg: AdaptConfig, lam: float, flops: int,
               report: AdaptationReport) -> Model:
    """Fine-tune ``model`` in place, logging one row before training and one per epoch."""
    rng = np.random.default_rng(derive_seed(acfg.seed, bs_id, ADAPT_METHODS.index(method)))
    optimizer = Optimizer(acfg.optimizer)
    gamma_json = json.dumps(list(report.gamma))

    def log_row(epoch: int):
        scores = evaluate(model, eval_set, "physics")
        report.rows.append({
            "bs_id": bs_id, "method": method, "samples_used": epoch * len(adapt_set),
            "epoch": epoch, "rmse": scores.rmse_dbm, "mae": scores.mae_dbm, "flops": flops,
            "bytes_exchanged": report.bytes_exchanged, "gamma_json": gamma_json,
        })

    log_row(0)
    epochs = tqdm(range(1, acfg.epochs + 1), desc=f"BS {bs_id} {method}", leave=False,
                  disable=not acfg.progress)
    for epoch in epochs:
        _, spent = run_epoch(model, adapt_set, optimizer, acfg.lr, "physics", lam,
                             acfg.batch, acfg.clip_norm, rng)
        flops += spent
        log_row(epoch)
    return model


def holdout_split(shifted: RssDataset, reserve: int) -> Tuple[RssDataset, RssDataset]:
    """
    Split shifted frames into an adaptation pool and a scoring set.

    The first ``reserve`` frames form the pool that every budget draws
    its prefix from; only the frames after it are ever scored.

    Raises:
        UsageError: If no frame is left to score
    """
    if len(shifted) <= reserve:
        raise UsageError(f"BS {shifted.bs_id}: split '{shifted.split}' has {len(shifted)} "
                         f"frames, need more than the {reserve} reserved for adaptation")
    return shifted.head(reserve), shifted.subset(np.arange(reserve, len(shifted)))


def _split_budget(shifted: RssDataset, eval_set: Optional[RssDataset],
                  samples: int) -> Tuple[RssDataset, RssDataset]:
    adapt_set = shifted.head(samples)
    if len(adapt_set) < 2:
        raise UsageError(f"Adaptation needs at least 2 shifted frames, got {len(adapt_set)}")
    if eval_set is None:
        return adapt_set, holdout_split(shifted, samples)[1]
    same_split = (eval_set.bs_id, eval_set.split) == (shifted.bs_id, shifted.split)
    if same_split and np.intersect1d(adapt_set.frame_ids, eval_set.frame_ids).size:
        raise ContractError(f"BS {shifted.bs_id}: adaptation and scoring frames overlap "
                            f"for a budget of {samples}")
    return adapt_set, eval_set


def collaborative_adapt(bs_id: int, shifted_data: RssDataset, donors: Sequence[Donor],
                        acfg: AdaptConfig, requester: Optional[ModelSnapshot] = None,
                        eval_data: Optional[RssDataset] = None,
                        samples: Optional[int] = None) -> Tuple[Model, AdaptationReport]:
    """
    Similarity-weighted aggregation followed by physics fine-tuning.

    Args:
        bs_id: Requesting BS
        shifted_data: Frames from the new domain; the first ``samples`` are used
        donors: Snapshots (with home statistics) of the other BSs
        acfg: Adaptation configuration
        requester: The requester's own snapshot, needed for the no-donor
            fallback and for self-weighting
        eval_data: Frames scored after every epoch (defaults to the frames of
            ``shifted_data`` after the first ``samples``)
        samples: Adaptation budget (defaults to ``acfg.samples``)

    Returns:
        (adapted model, AdaptationReport)
    """
    adapt_set, eval_set = _split_budget(shifted_data, eval_data, samples or acfg.samples)

    candidates = list(donors)
    if acfg.include_self and requester is not None:
        candidates.append(Donor(bs_id=bs_id, snapshot=requester))

    if not candidates:
        if requester is None:
            raise UsageError(f"BS {bs_id}: no donors and no own model to fine-tune")
        logger.warning(f"BS {bs_id}: no donors available, falling back to fine-tuning")
        report = AdaptationReport(bs_id=bs_id, method="proposed")
        model = _fine_tune(bs_id, "proposed", restore(requester), adapt_set, eval_set, acfg,
                           acfg.lam, 0, report)
        return model, report

    distances = []
    flops = 0
    for donor in candidates:
        donor_model = restore(donor.snapshot)
        local = collect_feature_stats(donor_model, adapt_set)
        distances.append(w2_distance(local, donor.stats))
        flops += inference_flops(donor_model, len(adapt_set), encoder_only=True)

    weights = similarity_weights(distances, acfg.eps)
    exchanged = [d for d in candidates if d.bs_id != bs_id]
    report = AdaptationReport(
        bs_id=bs_id, method="proposed",
        gamma=tuple(float(g) for g in weights.gamma),
        donor_ids=tuple(d.bs_id for d in candidates),
        bytes_exchanged=sum(d.snapshot.nbytes for d in exchanged),
    )
    logger.info(f"BS {bs_id}: W2 distances {np.round(distances, 4).tolist()} "
                f"-> gamma {np.round(weights.gamma, 4).tolist()}")

    model = aggregate([d.snapshot for d in candidates], weights)
    model = _fine_tune(bs_id, "proposed", model, adapt_set, eval_set, acfg, acfg.lam, flops, report)
    return model, report


def finetune_baseline(bs_id: int, requester: ModelSnapshot, shifted_data: RssDataset,
                      acfg: AdaptConfig, use_physics: bool = True,
                      eval_data: Optional[RssDataset] = None,
                      samples: Optional[int] = None) -> Tuple[Model, AdaptationReport]:
    """Fine-tune the requester's own model, with or without the physics term."""
    adapt_set, eval_set = _split_budget(shifted_data, eval_data, samples or acfg.samples)
    method = "finetune" if use_physics else "finetune_no_phy"
    report = AdaptationReport(bs_id=bs_id, method=method)
    model = _fine_tune(bs_id, method, restore(requester), adapt_set, eval_set, acfg,
                       acfg.lam if use_physics else 0.0, 0, report)
    return model, report


def averaged_baseline(bs_id: int, donors: Sequence[Donor], shifted_data: RssDataset,
                      acfg: AdaptConfig, eval_data: Optional[RssDataset] = None,
                      samples: Optional[int] = None) -> Tuple[Model, AdaptationReport]:
    """Uniform average of the donors, then physics fine-tuning."""
    if not donors:
        raise UsageError(f"BS {bs_id}: the averaged baseline needs at least one donor")
    adapt_set, eval_set = _split_budget(shifted_data, eval_data, samples or acfg.samples)
    report = AdaptationReport(
        bs_id=bs_id, method="averaged",
        gamma=tuple([1.0 / len(donors)] * len(donors)),
        donor_ids=tuple(d.bs_id for d in donors),
        bytes_exchanged=sum(d.snapshot.nbytes for d in donors),
    )
    model = average_snapshots([d.snapshot for d in donors])
    model = _fine_tune(bs_id, "averaged", model, adapt_set, eval_set, acfg, acfg.lam, 0, report)
    return model, report


def run_adaptation_comparison(bs_id: int, requester: ModelSnapshot, donors: Sequence[Donor],
                              shifted_data: RssDataset, acfg: AdaptConfig,
                              eval_data: Optional[RssDataset] = None,
                              samples: Optional[int] = None) -> Dict[str, AdaptationReport]:
    """All four adaptation methods on the same budget, keyed by method name."""
    reports = {}
    _, reports["proposed"] = collaborative_adapt(bs_id, shifted_data, donors, acfg, requester,
                                                 eval_data, samples)
    _, reports["finetune"] = finetune_baseline(bs_id, requester, shifted_data, acfg, True,
                                               eval_data, samples)
    _, reports["finetune_no_phy"] = finetune_baseline(bs_id, requester, shifted_data, acfg,
                                                      False, eval_data, samples)
    if donors:
        _, reports["averaged"] = averaged_baseline(bs_id, donors, shifted_data, acfg,
                                                   eval_data, samples)
    for method, report in reports.items():
        logger.info(f"BS {bs_id} {method}: final RMSE {report.final_rmse:.3f} dB, "
                    f"{report.total_flops:,} FLOPs")
    return reports


def efficiency_summary(reports: Dict[str, AdaptationReport]) -> Dict[str, Any]:
    """
    Samples and FLOPs the proposed method needs to reach fine-tuning's final RMSE.

    Ratios are relative to the fine-tuning baseline's totals; None when the
    target is never reached.
    """
    proposed, finetune = reports["proposed"], reports["finetune"]
    target = finetune.final_rmse
    reached = proposed.first_reaching(target)
    base_samples = finetune.rows[-1]["samples_used"] if finetune.rows else 0
    summary = {
        "bs_id": proposed.bs_id,
        "target_rmse": target,
        "samples_needed": reached["samples_used"] if reached else None,
        "flops_needed": reached["flops"] if reached else None,
        "sample_ratio": None,
        "flops_ratio": None,
    }
    if reached and base_samples:
        summary["sample_ratio"] = reached["samples_used"] / base_samples
    if reached and finetune.total_flops:
        summary["flops_ratio"] = reached["flops"] / finetune.total_flops
    if "averaged" in reports:
        summary["averaged_beats_proposed"] = reports["averaged"].final_rmse < proposed.final_rmse
    return summary


def adaptation_budget_sweep(bs_id: int, requester: ModelSnapshot, donors: Sequence[Donor],
                            shifted_data: RssDataset, acfg: AdaptConfig,
                            eval_data: Optional[RssDataset] = None,
                            budgets: Optional[Sequence[int]] = None) -> Tuple[List[Dict], Optional[int]]:
    """
    Final RMSE of every method for each adaptation sample budget.

    Every budget is scored on the same frames: ``eval_data`` or, when it
    is None, the shifted frames after the largest budget.

    Returns:
        (rows with BUDGET_COLUMNS fields, smallest budget at which the
        proposed method reaches fine-tuning's RMSE at the largest budget)
    """
    budgets = sorted(budgets or acfg.budgets)
    if eval_data is None:
        shifted_data, eval_data = holdout_split(shifted_data, budgets[-1])
    rows = []
    final: Dict[Tuple[str, int], float] = {}
    for budget in budgets:
        reports = run_adaptation_comparison(bs_id, requester, donors, shifted_data, acfg,
                                            eval_data, budget)
        for method, report in reports.items():
            final[(method, budget)] = report.final_rmse
            last = report.rows[-1]
            rows.append({"bs_id": bs_id, "method": method, "budget": budget,
                         "rmse": last["rmse"], "mae": last["mae"], "flops": last["flops"],
                         "bytes_exchanged": report.bytes_exchanged})

    target = final[("finetune", budgets[-1])]
    crossover = next((b for b in budgets if final[("proposed", b)] <= target), None)
    return rows, crossover
