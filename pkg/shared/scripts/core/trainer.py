"""
Per-BS supervised training, evaluation and the sample-efficiency sweep.
"""

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .dataset import RssDataset
from .errors import UsageError
from .loss import METHODS, LossBreakdown, predicted_rss, total_loss
from .net import (Model, NetConfig, backward, clip_gradients, flops_estimate,
                  forward_batch, init_model)
from .settings import derive_seed
from utils import get_logger

logger = get_logger("trainer")

OPTIMIZERS = ("sgd", "adam")

TRAIN_COLUMNS = ("bs_id", "method", "seed", "fraction", "epoch", "split",
                 "mae", "rmse", "flops", "l_data", "l_phy")
SWEEP_COLUMNS = ("bs_id", "method", "lam", "seed", "fraction", "split", "mae", "rmse",
                 "mae_los", "mae_nlos", "flops")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch: int = 64
    lr: float = 1e-4
    lr_decay_epochs: Tuple[int, ...] = (10, 30)
    lr_decay_factor: float = 0.1
    lam: float = 0.5
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    method: str = "physics"
    methods: Tuple[str, ...] = METHODS
    optimizer: str = "sgd"
    clip_norm: float = 1.0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    eval_batch: int = 256
    holdout_fraction: float = 0.1
    sweep_lams: Tuple[float, ...] = ()
    progress: bool = True

    def validate(self) -> List[str]:
        errors = []
        if self.epochs < 0:
            errors.append("epochs must be non-negative")
        if self.batch < 1 or self.eval_batch < 1:
            errors.append("batch sizes must be at least 1")
        if self.lr < 0:
            errors.append("lr must be non-negative")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            errors.append("lr_decay_factor must lie in (0, 1]")
        if self.lam < 0:
            errors.append("lam must be non-negative")
        if not self.seeds:
            errors.append("seeds must name at least one seed")
        for method in (self.method,) + tuple(self.methods):
            if method not in METHODS:
                errors.append(f"unknown method '{method}'")
        if self.optimizer not in OPTIMIZERS:
            errors.append(f"optimizer must be one of {OPTIMIZERS}")
        if self.clip_norm <= 0:
            errors.append("clip_norm must be strictly positive")
        if not 0.0 <= self.holdout_fraction < 0.5:
            errors.append("holdout_fraction must lie in [0, 0.5)")
        if any(lam < 0 for lam in self.sweep_lams):
            errors.append("sweep_lams must be non-negative")
        return errors

    def lr_at(self, epoch: int) -> float:
        decays = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor ** decays

    @property
    def lams(self) -> Tuple[float, ...]:
        """Physics weights the sample-efficiency sweep trains with."""
        return tuple(self.sweep_lams) or (self.lam,)


@dataclass(frozen=True)
class EvalReport:
    split: str
    mae_dbm: float
    rmse_dbm: float
    mae_los: float = float("nan")
    mae_nlos: float = float("nan")
    rmse_los: float = float("nan")
    rmse_nlos: float = float("nan")
    n_frames: int = 0
    fraction: float = 1.0
    flops: int = 0
    epoch: int = -1


@dataclass
class TrainResult:
    model: Model
    history: List[EvalReport] = field(default_factory=list)
    losses: List[LossBreakdown] = field(default_factory=list)
    rows: List[Dict] = field(default_factory=list)
    flops: int = 0


class Optimizer:
    """Plain SGD or Adam over a parameter dictionary, updated in place."""

    def __init__(self, kind: str = "sgd", betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        if kind not in OPTIMIZERS:
            raise UsageError(f"Unknown optimizer '{kind}'")
        self.kind = kind
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Optimizer":
        return cls(cfg.optimizer, cfg.adam_betas, cfg.adam_eps)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float):
        if self.kind == "sgd":
            for name, g in grads.items():
                params[name] -= lr * g
            return

        self.step_count += 1
        b1, b2 = self.betas
        for name, g in grads.items():
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - b1 ** self.step_count)
            v_hat = v / (1.0 - b2 ** self.step_count)
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def run_epoch(model: Model, dataset: RssDataset, optimizer: Optimizer, lr: float,
              method: str, lam: float, batch: int, clip_norm: float,
              rng: np.random.Generator) -> Tuple[LossBreakdown, int]:
    """
    One pass of clipped mini-batch descent over ``dataset``.

    Returns:
        (frame-weighted mean LossBreakdown, FLOPs spent)
    """
    order = rng.permutation(len(dataset))
    totals = np.zeros(3)
    flops = 0
    lam_used = 0.0
    for start in range(0, len(order), batch):
        idx = order[start:start + batch]
        pred = forward_batch(model, dataset.batch_inputs(idx), dataset.r_los[idx])
        breakdown, d_heads, _ = total_loss(pred.heads, dataset.r_los[idx], dataset.rss[idx],
                                           dataset.los_mask[idx], lam=lam, method=method)
        grads, _ = clip_gradients(backward(model, pred, d_heads), clip_norm)
        optimizer.step(model.params, grads, lr)

        totals += len(idx) * np.array([breakdown.l_data, breakdown.l_los, breakdown.l_nlos])
        lam_used = breakdown.lam
        flops += flops_estimate(model, len(idx))

    totals /= max(len(order), 1)
    return LossBreakdown(l_data=float(totals[0]), l_los=float(totals[1]),
                         l_nlos=float(totals[2]), lam=lam_used), flops


def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(err ** 2))) if err.size else float("nan")


def _mae(err: np.ndarray) -> float:
    return float(np.mean(np.abs(err))) if err.size else float("nan")


def predict(model: Model, dataset: RssDataset, method: str = "physics",
            batch: int = 256) -> np.ndarray:
    """Predicted RSS (S, N) for every frame of ``dataset``."""
    out = np.empty_like(dataset.rss)
    for start in range(0, len(dataset), batch):
        idx = np.arange(start, min(start + batch, len(dataset)))
        pred = forward_batch(model, dataset.batch_inputs(idx), dataset.r_los[idx])
        out[idx] = predicted_rss(method, pred.heads, dataset.r_los[idx], dataset.los_mask[idx])
    return out


def evaluate(model: Model, dataset: RssDataset, method: str = "physics",
             batch: int = 256, **tags) -> EvalReport:
    """
    MAE and RMSE of ``model`` on ``dataset``, overall and per LoS class.

    Args:
        model: Network (not modified)
        dataset: Frames to score
        method: Training method that produced ``model``
        batch: Evaluation batch size
        **tags: Extra EvalReport fields (fraction, flops, epoch)
    """
    err = predict(model, dataset, method, batch) - dataset.rss
    los = dataset.los_mask
    return EvalReport(
        split=dataset.split,
        mae_dbm=_mae(err),
        rmse_dbm=_rmse(err),
        mae_los=_mae(err[los]),
        mae_nlos=_mae(err[~los]),
        rmse_los=_rmse(err[los]),
        rmse_nlos=_rmse(err[~los]),
        n_frames=len(dataset),
        **tags,
    )


def split_holdout(dataset: RssDataset,
                  fraction: float) -> Tuple[RssDataset, Optional[RssDataset]]:
    """
    Hold the last ``ceil(fraction * len)`` frames out of training.

    Returns:
        (frames to fit, held-out frames relabelled as split ``holdout``,
        or None when nothing is held out)

    Raises:
        UsageError: If no frame would be left to fit
    """
    count = int(np.ceil(fraction * len(dataset)))
    if count == 0:
        return dataset, None
    if count >= len(dataset):
        raise UsageError(f"BS {dataset.bs_id}: holding out {count} of {len(dataset)} "
                         f"frames leaves nothing to train on")
    cut = len(dataset) - count
    held = replace(dataset.subset(np.arange(cut, len(dataset))), split="holdout")
    return dataset.head(cut), held


def train(bs_id: int, dataset: RssDataset, cfg: TrainConfig,
          net_config: Optional[NetConfig] = None, seed: Optional[int] = None,
          method: Optional[str] = None, fraction: float = 1.0,
          val_sets: Sequence[RssDataset] = (),
          model: Optional[Model] = None) -> TrainResult:
    """
    Train one BS model.

    Args:
        bs_id: Base station index (part of every seed)
        dataset: Training frames
        cfg: Training configuration
        net_config: Architecture (n_receivers is taken from the dataset)
        seed: Run seed (defaults to the first configured seed)
        method: Training method (defaults to ``cfg.method``)
        fraction: Training-set fraction, recorded in the metrics rows
        val_sets: Splits evaluated after every epoch
        model: Start from this model instead of a fresh initialisation

    Returns:
        TrainResult with the model, per-epoch reports, losses and CSV rows

    Raises:
        UsageError: If ``dataset`` is empty
    """
    if len(dataset) == 0:
        raise UsageError(f"BS {bs_id}: training dataset is empty")
    seed = cfg.seeds[0] if seed is None else seed
    method = method or cfg.method

    if model is None:
        ncfg = net_config or NetConfig()
        if ncfg.n_receivers != dataset.n_receivers:
            ncfg = replace(ncfg, n_receivers=dataset.n_receivers)
        model = init_model(ncfg, dataset.feature_config, derive_seed(seed, bs_id))
    rng = np.random.default_rng(derive_seed(seed, bs_id, 1))
    optimizer = Optimizer.from_config(cfg)
    result = TrainResult(model=model)

    epochs = tqdm(range(cfg.epochs), desc=f"BS {bs_id} {method} seed {seed}",
                  leave=False, disable=not cfg.progress)
    for epoch in epochs:
        breakdown, flops = run_epoch(model, dataset, optimizer, cfg.lr_at(epoch), method,
                                     cfg.lam, cfg.batch, cfg.clip_norm, rng)
        result.flops += flops
        result.losses.append(breakdown)
        logger.debug(f"BS {bs_id} {method} epoch {epoch}: l_data={breakdown.l_data:.4f} "
                     f"l_phy={breakdown.l_phy:.4f}")

        for val in val_sets:
            report = evaluate(model, val, method, cfg.eval_batch,
                              fraction=fraction, flops=result.flops, epoch=epoch)
            result.history.append(report)
            result.rows.append({
                "bs_id": bs_id, "method": method, "seed": seed, "fraction": fraction,
                "epoch": epoch, "split": val.split, "mae": report.mae_dbm,
                "rmse": report.rmse_dbm, "flops": result.flops,
                "l_data": breakdown.l_data, "l_phy": breakdown.l_phy,
            })

    if result.losses:
        logger.info(f"BS {bs_id} {method} seed {seed}: final l_data={result.losses[-1].l_data:.3f}")
    return result


def sample_efficiency_sweep(bs_id: int, train_set: RssDataset, val_sets: Sequence[RssDataset],
                            fractions: Sequence[float], methods: Sequence[str],
                            seeds: Sequence[int], cfg: TrainConfig,
                            net_config: Optional[NetConfig] = None,
                            lams: Optional[Sequence[float]] = None) -> List[Dict]:
    """
    Train on nested prefixes of the training set and score every VAL split.

    The physics method is trained once per weight in ``lams`` (default
    ``cfg.lams``); the baselines ignore the weight and are trained once
    with ``lam`` recorded as 0.

    Returns:
        Rows with the SWEEP_COLUMNS fields, one per (method, lam, seed, fraction, split)
    """
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise UsageError(f"Sweep fractions must lie in (0, 1], got {fraction}")
    lams = tuple(lams) if lams else cfg.lams
    if any(lam < 0 for lam in lams):
        raise UsageError(f"Physics weights must be non-negative, got {list(lams)}")

    rows = []
    for method in methods:
        for lam in (lams if method == "physics" else (0.0,)):
            run_cfg = replace(cfg, lam=lam)
            for seed in seeds:
                for fraction in sorted(fractions):
                    subset = train_set.nested_prefix(fraction, derive_seed(seed, bs_id, 2))
                    result = train(bs_id, subset, run_cfg, net_config, seed=seed, method=method,
                                   fraction=fraction)
                    for val in val_sets:
                        report = evaluate(result.model, val, method, cfg.eval_batch)
                        rows.append({
                            "bs_id": bs_id, "method": method, "lam": lam, "seed": seed,
                            "fraction": fraction, "split": val.split,
                            "mae": report.mae_dbm, "rmse": report.rmse_dbm,
                            "mae_los": report.mae_los, "mae_nlos": report.mae_nlos,
                            "flops": result.flops,
                        })
                    logger.info(f"BS {bs_id} {method} lam {lam:g} seed {seed} "
                                f"fraction {fraction:g} done")
    return rows


def median_table(rows: Iterable[Dict], metric: str = "mae") -> Dict[Tuple, float]:
    """Median over seeds keyed by (bs_id, method, split, fraction)."""
    groups: Dict[Tuple, List[float]] = defaultdict(list)
    for row in rows:
        groups[(row["bs_id"], row["method"], row["split"], row["fraction"])].append(row[metric])
    return {key: float(np.median(values)) for key, values in sorted(groups.items())}


def crossover_fractions(rows: Sequence[Dict], method: str = "physics",
                        reference: str = "baseline1",
                        lam: Optional[float] = None) -> Dict[Tuple[int, str], Optional[float]]:
    """
    Smallest fraction at which ``method`` matches ``reference`` trained on the full set.

    ``lam`` keeps only the ``method`` rows trained with that physics weight.

    Returns:
        {(bs_id, split): fraction or None if never reached}
    """
    if lam is not None:
        rows = [r for r in rows if r["method"] != method or r.get("lam") == lam]
    medians = median_table(rows)
    result = {}
    keys = sorted({(bs, split) for bs, _, split, _ in medians})
    for bs_id, split in keys:
        ref_fracs = [f for b, m, s, f in medians if (b, m, s) == (bs_id, reference, split)]
        if not ref_fracs:
            result[(bs_id, split)] = None
            continue
        target = medians[(bs_id, reference, split, max(ref_fracs))]
        fracs = sorted(f for b, m, s, f in medians if (b, m, s) == (bs_id, method, split))
        result[(bs_id, split)] = next(
            (f for f in fracs if medians[(bs_id, method, split, f)] <= target), None)
    return result


def relative_improvement(ours: EvalReport, baseline: EvalReport) -> Dict[str, float]:
    """Percentage MAE/RMSE reduction of ``ours`` relative to ``baseline``."""

    def pct(a: float, b: float) -> float:
        return 100.0 * (b - a) / b if b else float("nan")

    return {"mae_pct": pct(ours.mae_dbm, baseline.mae_dbm),
            "rmse_pct": pct(ours.rmse_dbm, baseline.rmse_dbm)}
