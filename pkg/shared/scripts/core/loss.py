"""
Training objectives: MSE data loss plus the LoS/NLoS physics penalties.

On LoS receivers the physics term penalises any predicted blockage and any
reflection gain above the predicted bound R-bar; on NLoS receivers it
penalises any predicted reflection gain and any blockage below the predicted
floor B. Hinge subgradients at the kink are 0.

Because the heads pass through a softplus, they are strictly positive, so
``l_phy`` only reaches 0 in the limit of vanishing heads; in practice it is
bounded below by the softplus floor of the blockage (LoS) and reflection
(NLoS) heads.

Baselines share the same network:

- ``baseline1``: plain MSE.
- ``baseline2``: MSE with NLoS receivers weighted by 1.2.
- ``baseline3``: LoS receivers are predicted by the path-loss value alone;
  the network only predicts the NLoS attenuation.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ContractError, UsageError
from .net import HEAD_B, HEAD_BLOCKAGE, HEAD_RBAR, HEAD_REFLECTION, N_HEADS

METHODS = ("physics", "baseline1", "baseline2", "baseline3")
NLOS_WEIGHT = 1.2


@dataclass(frozen=True)
class LossBreakdown:
    l_data: float
    l_los: float
    l_nlos: float
    lam: float

    @property
    def l_phy(self) -> float:
        return self.l_los + self.l_nlos

    @property
    def l_total(self) -> float:
        return self.l_data + self.lam * self.l_phy


def _check(method: str):
    if method not in METHODS:
        raise UsageError(f"Unknown training method '{method}', expected one of {METHODS}")


def data_loss(rss_hat: np.ndarray, rss: np.ndarray) -> float:
    """Mean squared RSS error over every receiver (and frame)."""
    rss_hat = np.asarray(rss_hat, dtype=float)
    rss = np.asarray(rss, dtype=float)
    if rss_hat.shape != rss.shape:
        raise ContractError(f"Prediction shape {rss_hat.shape} != truth shape {rss.shape}")
    return float(np.mean((rss_hat - rss) ** 2))


def physics_loss(heads: np.ndarray, los_mask: np.ndarray) -> Tuple[float, float]:
    """
    LoS and NLoS physics penalties.

    Args:
        heads: (..., N, 4) non-negative head outputs
        los_mask: (..., N) LoS labels

    Returns:
        (l_los, l_nlos); a receiver class that is empty contributes 0
    """
    los = np.asarray(los_mask, dtype=bool)
    refl, block = heads[..., HEAD_REFLECTION], heads[..., HEAD_BLOCKAGE]
    rbar, floor = heads[..., HEAD_RBAR], heads[..., HEAD_B]

    los_terms = block + np.maximum(0.0, refl - rbar)
    nlos_terms = refl + np.maximum(0.0, floor - block)
    l_los = float(los_terms[los].mean()) if los.any() else 0.0
    l_nlos = float(nlos_terms[~los].mean()) if (~los).any() else 0.0
    return l_los, l_nlos


def physics_loss_grad(heads: np.ndarray, los_mask: np.ndarray) -> np.ndarray:
    """Gradient of ``l_los + l_nlos`` w.r.t. the heads."""
    los = np.asarray(los_mask, dtype=bool)
    nlos = ~los
    grad = np.zeros_like(heads)
    refl, block = heads[..., HEAD_REFLECTION], heads[..., HEAD_BLOCKAGE]
    rbar, floor = heads[..., HEAD_RBAR], heads[..., HEAD_B]

    n_los = int(los.sum())
    if n_los:
        w = los / n_los
        hinge = (refl > rbar) * w
        grad[..., HEAD_BLOCKAGE] += w
        grad[..., HEAD_REFLECTION] += hinge
        grad[..., HEAD_RBAR] -= hinge

    n_nlos = int(nlos.sum())
    if n_nlos:
        w = nlos / n_nlos
        hinge = (floor > block) * w
        grad[..., HEAD_REFLECTION] += w
        grad[..., HEAD_B] += hinge
        grad[..., HEAD_BLOCKAGE] -= hinge
    return grad


def predicted_rss(method: str, heads: np.ndarray, r_los: np.ndarray,
                  los_mask: np.ndarray) -> np.ndarray:
    """RSS estimate of a training method from its head outputs."""
    _check(method)
    if method == "baseline3":
        return np.where(los_mask, r_los, r_los - heads[..., HEAD_BLOCKAGE])
    return r_los + heads[..., HEAD_REFLECTION] - heads[..., HEAD_BLOCKAGE]


def total_loss(heads: np.ndarray, r_los: np.ndarray, rss: np.ndarray, los_mask: np.ndarray,
               lam: float = 0.5, method: str = "physics"):
    """
    Composite objective and its gradient w.r.t. the four heads.

    Args:
        heads: (B, N, 4) head outputs
        r_los: (B, N) LoS RSS
        rss: (B, N) true RSS
        los_mask: (B, N) LoS labels
        lam: Physics weight (used by ``physics`` only)
        method: Training method

    Returns:
        (LossBreakdown, d_heads, rss_hat)
    """
    _check(method)
    if heads.shape[-1] != N_HEADS or heads.shape[:-1] != np.shape(rss):
        raise ContractError(f"heads shape {heads.shape} does not match truth shape {np.shape(rss)}")

    los = np.asarray(los_mask, dtype=bool)
    rss_hat = predicted_rss(method, heads, r_los, los)
    err = rss_hat - rss
    count = err.size

    weights = np.ones_like(err)
    if method == "baseline2":
        weights = np.where(los, 1.0, NLOS_WEIGHT)
    l_data = float(np.mean(weights * err ** 2)) if count else 0.0

    d_rss = 2.0 * weights * err / max(count, 1)
    grad = np.zeros_like(heads)
    if method == "baseline3":
        grad[..., HEAD_BLOCKAGE] = -d_rss * (~los)
    else:
        grad[..., HEAD_REFLECTION] = d_rss
        grad[..., HEAD_BLOCKAGE] = -d_rss

    l_los, l_nlos = physics_loss(heads, los)
    effective_lam = lam if method == "physics" else 0.0
    if effective_lam:
        grad += effective_lam * physics_loss_grad(heads, los)

    return LossBreakdown(l_data=l_data, l_los=l_los, l_nlos=l_nlos, lam=effective_lam), grad, rss_hat
