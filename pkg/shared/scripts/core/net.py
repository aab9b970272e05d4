"""
Small multi-modal RSS predictor with hand-written backpropagation.

Each modality has a two-layer tanh encoder; the encoder outputs are
concatenated and projected to the fused feature ``f``. A three-layer head
maps ``[f || embedding(i, j)]`` to four non-negative dB values per receiver:
reflection gain, blockage attenuation, reflection bound R-bar and blockage
floor B. The RSS estimate is ``r_los + reflection - blockage``.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractError
from .features import MODALITIES, FeatureBlock, FeatureConfig, modality_inputs
from .settings import build_config, config_to_dict

SNAPSHOT_SCHEMA = 1
SNAPSHOT_MAGIC = b"RSSW"

HEAD_REFLECTION, HEAD_BLOCKAGE, HEAD_RBAR, HEAD_B = range(4)
N_HEADS = 4


@dataclass(frozen=True)
class NetConfig:
    n_receivers: int = 64
    encoder_hidden: int = 32
    fused_dim: int = 64
    head_hidden: int = 64
    embed_dim: int = 8
    output_scale_db: float = 10.0

    def validate(self) -> List[str]:
        errors = []
        for name in ("n_receivers", "encoder_hidden", "fused_dim", "head_hidden", "embed_dim"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be at least 1")
        if self.output_scale_db <= 0:
            errors.append("output_scale_db must be strictly positive")
        return errors


@dataclass
class Model:
    """Parameter tensors of encoders, fusion layer, embeddings and head."""

    config: NetConfig
    feature_config: FeatureConfig
    params: Dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.config, self.feature_config,
                     {k: v.copy() for k, v in self.params.items()})

    @property
    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def __repr__(self):
        return f"Model({self.parameter_count} parameters, N={self.config.n_receivers})"


@dataclass
class Prediction:
    rss_hat: np.ndarray
    heads: np.ndarray
    fused: np.ndarray
    cache: Dict[str, Any] = field(default_factory=dict, repr=False)


def param_shapes(ncfg: NetConfig, fcfg: FeatureConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered parameter names and shapes."""
    dims = fcfg.modality_dims()
    h, f, hh = ncfg.encoder_hidden, ncfg.fused_dim, ncfg.head_hidden
    shapes: Dict[str, Tuple[int, ...]] = {}
    for m in MODALITIES:
        shapes[f"enc_{m}_w1"] = (dims[m], h)
        shapes[f"enc_{m}_b1"] = (h,)
        shapes[f"enc_{m}_w2"] = (h, h)
        shapes[f"enc_{m}_b2"] = (h,)
    shapes["fuse_w"] = (h * len(MODALITIES), f)
    shapes["fuse_b"] = (f,)
    shapes["embedding"] = (ncfg.n_receivers, ncfg.embed_dim)
    shapes["head_w1"] = (f + ncfg.embed_dim, hh)
    shapes["head_b1"] = (hh,)
    shapes["head_w2"] = (hh, hh)
    shapes["head_b2"] = (hh,)
    shapes["head_w3"] = (hh, N_HEADS)
    shapes["head_b3"] = (N_HEADS,)
    return shapes


def init_model(ncfg: NetConfig, fcfg: FeatureConfig, seed: int) -> Model:
    """
    Glorot-uniform weights and embeddings, zero biases.

    Args:
        ncfg: Architecture
        fcfg: Feature configuration fixing the encoder input sizes
        seed: Initialisation seed (one per BS and run)
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(ncfg, fcfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return Model(ncfg, fcfg, params)


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_inputs(model: Model, inputs: Dict[str, np.ndarray], r_los: np.ndarray) -> int:
    dims = model.feature_config.modality_dims()
    batch = None
    for m in MODALITIES:
        if m not in inputs:
            raise ContractError(f"Missing modality '{m}'")
        x = inputs[m]
        if x.ndim != 2 or x.shape[1] != dims[m]:
            raise ContractError(f"Modality '{m}' has shape {x.shape}, expected (B, {dims[m]})")
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise ContractError("Modalities disagree on batch size")
    if r_los.shape != (batch, model.config.n_receivers):
        raise ContractError(
            f"r_los has shape {r_los.shape}, expected ({batch}, {model.config.n_receivers})")
    return batch


def encode(model: Model, inputs: Dict[str, np.ndarray], cache: Optional[Dict] = None) -> np.ndarray:
    """Fused feature ``f`` (B, m_f) for a batch of encoder inputs."""
    p = model.params
    encoded = []
    for m in MODALITIES:
        x = inputs[m]
        h1 = np.tanh(x @ p[f"enc_{m}_w1"] + p[f"enc_{m}_b1"])
        h2 = np.tanh(h1 @ p[f"enc_{m}_w2"] + p[f"enc_{m}_b2"])
        if cache is not None:
            cache[f"x_{m}"], cache[f"h1_{m}"], cache[f"h2_{m}"] = x, h1, h2
        encoded.append(h2)
    concat = np.concatenate(encoded, axis=1)
    fused = np.tanh(concat @ p["fuse_w"] + p["fuse_b"])
    if cache is not None:
        cache["concat"], cache["fused"] = concat, fused
    return fused


def forward_batch(model: Model, inputs: Dict[str, np.ndarray], r_los: np.ndarray) -> Prediction:
    """
    Forward pass over a batch.

    Args:
        model: Network
        inputs: Encoder inputs, one (B, d) array per modality
        r_los: (B, N) LoS RSS from the oracle geometry

    Returns:
        Prediction with heads (B, N, 4), rss_hat (B, N), fused (B, m_f)
        and the cache needed by ``backward``

    Raises:
        ContractError: On shape mismatch
    """
    r_los = np.asarray(r_los, dtype=float)
    batch = _check_inputs(model, inputs, r_los)
    p, cfg = model.params, model.config
    n = cfg.n_receivers

    cache: Dict[str, Any] = {"batch": batch}
    fused = encode(model, inputs, cache)

    tiled = np.broadcast_to(fused[:, None, :], (batch, n, cfg.fused_dim))
    embed = np.broadcast_to(p["embedding"][None, :, :], (batch, n, cfg.embed_dim))
    z0 = np.concatenate([tiled, embed], axis=2).reshape(batch * n, -1)
    a1 = np.tanh(z0 @ p["head_w1"] + p["head_b1"])
    a2 = np.tanh(a1 @ p["head_w2"] + p["head_b2"])
    z3 = a2 @ p["head_w3"] + p["head_b3"]
    heads = (cfg.output_scale_db * softplus(z3)).reshape(batch, n, N_HEADS)
    cache.update(z0=z0, a1=a1, a2=a2, z3=z3)

    rss_hat = r_los + heads[..., HEAD_REFLECTION] - heads[..., HEAD_BLOCKAGE]
    return Prediction(rss_hat=rss_hat, heads=heads, fused=fused, cache=cache)


def forward(model: Model, fb: FeatureBlock, r_los: np.ndarray) -> Prediction:
    """Forward pass for a single frame (batch of one)."""
    inputs = {m: v[None, :] for m, v in modality_inputs(fb, model.feature_config).items()}
    return forward_batch(model, inputs, np.asarray(r_los, dtype=float)[None, :])


def backward(model: Model, pred: Prediction, d_heads: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss.

    Args:
        model: Network used for ``pred``
        pred: Output of ``forward_batch`` on the same inputs
        d_heads: (B, N, 4) gradient of the loss w.r.t. the four heads

    Returns:
        Gradient for every parameter, keyed like ``model.params``
    """
    p, cfg, c = model.params, model.config, pred.cache
    batch, n = c["batch"], cfg.n_receivers
    if d_heads.shape != (batch, n, N_HEADS):
        raise ContractError(f"d_heads has shape {d_heads.shape}, expected {(batch, n, N_HEADS)}")
    grads: Dict[str, np.ndarray] = {}

    dz3 = d_heads.reshape(batch * n, N_HEADS) * cfg.output_scale_db * sigmoid(c["z3"])
    grads["head_w3"] = c["a2"].T @ dz3
    grads["head_b3"] = dz3.sum(axis=0)
    dpre = (dz3 @ p["head_w3"].T) * (1.0 - c["a2"] ** 2)
    grads["head_w2"] = c["a1"].T @ dpre
    grads["head_b2"] = dpre.sum(axis=0)
    dpre = (dpre @ p["head_w2"].T) * (1.0 - c["a1"] ** 2)
    grads["head_w1"] = c["z0"].T @ dpre
    grads["head_b1"] = dpre.sum(axis=0)

    dz0 = (dpre @ p["head_w1"].T).reshape(batch, n, -1)
    d_fused = dz0[:, :, :cfg.fused_dim].sum(axis=1)
    grads["embedding"] = dz0[:, :, cfg.fused_dim:].sum(axis=0)

    dpre = d_fused * (1.0 - c["fused"] ** 2)
    grads["fuse_w"] = c["concat"].T @ dpre
    grads["fuse_b"] = dpre.sum(axis=0)
    d_concat = dpre @ p["fuse_w"].T

    h = cfg.encoder_hidden
    for k, m in enumerate(MODALITIES):
        dpre = d_concat[:, k * h:(k + 1) * h] * (1.0 - c[f"h2_{m}"] ** 2)
        grads[f"enc_{m}_w2"] = c[f"h1_{m}"].T @ dpre
        grads[f"enc_{m}_b2"] = dpre.sum(axis=0)
        dpre = (dpre @ p[f"enc_{m}_w2"].T) * (1.0 - c[f"h1_{m}"] ** 2)
        grads[f"enc_{m}_w1"] = c[f"x_{m}"].T @ dpre
        grads[f"enc_{m}_b1"] = dpre.sum(axis=0)

    return {name: grads[name] for name in p}


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float = 1.0):
    """
    Scale gradients so their global norm is at most ``max_norm``.

    Returns:
        (clipped gradients, norm before clipping)
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def forward_macs(model: Model) -> int:
    """Multiply-accumulates of one forward pass over one frame (all receivers)."""
    encoder = 0
    head = 0
    for name, value in model.params.items():
        if value.ndim != 2 or name == "embedding":
            continue
        if name.startswith("head_"):
            head += value.shape[0] * value.shape[1]
        else:
            encoder += value.shape[0] * value.shape[1]
    return encoder + model.config.n_receivers * head


def encoder_macs(model: Model) -> int:
    return sum(v.shape[0] * v.shape[1] for k, v in model.params.items()
               if v.ndim == 2 and (k.startswith("enc_") or k == "fuse_w"))


def training_flops(macs: int, batch: int) -> int:
    """2 FLOPs per MAC, and backward taken as twice the forward cost."""
    return 2 * macs * 3 * batch


def flops_estimate(model: Model, batch: int) -> int:
    """Forward plus backward FLOPs for ``batch`` frames."""
    return training_flops(forward_macs(model), batch)


def inference_flops(model: Model, batch: int, encoder_only: bool = False) -> int:
    macs = encoder_macs(model) if encoder_only else forward_macs(model)
    return 2 * macs * batch


@dataclass(frozen=True)
class ModelSnapshot:
    """
    Immutable parameter copy exchanged between BSs.

    The wire form is ``MAGIC | uint32 header length | JSON header | float64 data``.
    """

    net_config: NetConfig
    feature_config: FeatureConfig
    names: Tuple[str, ...]
    shapes: Tuple[Tuple[int, ...], ...]
    vector: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def nbytes(self) -> int:
        return len(self.to_bytes())

    def architecture(self) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
        return tuple(zip(self.names, self.shapes))

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "schema": SNAPSHOT_SCHEMA,
            "net_config": config_to_dict(self.net_config),
            "feature_config": config_to_dict(self.feature_config),
            "names": list(self.names),
            "shapes": [list(s) for s in self.shapes],
            "metadata": self.metadata,
        }, sort_keys=True, separators=(",", ":")).encode("utf-8")
        data = np.ascontiguousarray(self.vector, dtype="<f8").tobytes()
        return SNAPSHOT_MAGIC + struct.pack("<I", len(header)) + header + data

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelSnapshot":
        if blob[:4] != SNAPSHOT_MAGIC:
            raise ContractError("Not a model snapshot")
        (length,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8:8 + length].decode("utf-8"))
        if header.get("schema") != SNAPSHOT_SCHEMA:
            raise ContractError(f"Unsupported snapshot schema: {header.get('schema')}")
        vector = np.frombuffer(blob[8 + length:], dtype="<f8").astype(float)
        vector.setflags(write=False)
        return cls(
            net_config=build_config(NetConfig, header["net_config"], "net"),
            feature_config=build_config(FeatureConfig, header["feature_config"], "features"),
            names=tuple(header["names"]),
            shapes=tuple(tuple(s) for s in header["shapes"]),
            vector=vector,
            metadata=header["metadata"],
        )


def snapshot(model: Model, metadata: Optional[Dict[str, Any]] = None) -> ModelSnapshot:
    names = tuple(model.params)
    vector = np.concatenate([model.params[k].ravel() for k in names])
    vector.setflags(write=False)
    return ModelSnapshot(
        net_config=model.config,
        feature_config=model.feature_config,
        names=names,
        shapes=tuple(model.params[k].shape for k in names),
        vector=vector,
        metadata=dict(metadata or {}),
    )


def restore(snap: ModelSnapshot, vector: Optional[np.ndarray] = None) -> Model:
    """Model from a snapshot, optionally with a replacement parameter vector."""
    flat = np.array(snap.vector if vector is None else vector, dtype=float)
    params = {}
    offset = 0
    for name, shape in snap.architecture():
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ContractError("Snapshot vector length does not match its shapes")
    return Model(snap.net_config, snap.feature_config, params)
