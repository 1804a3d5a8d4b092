"""Forward-only attention blocks for proposal initialization and instance encoding.

All learnable parameters are supplied by the caller. Linear maps follow the
``y = x @ weight.T + bias`` convention with ``weight`` shaped (out, in), so a
projection ``W`` acts on a feature vector as ``W @ v``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import ShapeError, softmax_lastdim, trilinear_sample_many

# layer counts and sampling density of the reference configuration
DCA_LAYERS = 3
DSA_LAYERS = 2
DECODE_CA_LAYERS = 3
DECODE_SA_LAYERS = 3
NUM_POINTS = 8


@dataclass(frozen=True)
class DeformableWeights:
    """Single-head deformable attention parameters.

    ``offset_weight`` (3N, C) and ``attn_weight`` (N, C) are the linear maps
    producing per-point displacements and pre-softmax scores from a query.
    """

    W: np.ndarray
    offset_weight: np.ndarray
    offset_bias: np.ndarray
    attn_weight: np.ndarray
    attn_bias: np.ndarray

    def __post_init__(self):
        C = self.W.shape[0]
        n = self.attn_weight.shape[0]
        if n < 1:
            raise ShapeError("at least one sampling point is required")
        expected = {
            "W": (C, C), "offset_weight": (3 * n, C), "offset_bias": (3 * n,),
            "attn_weight": (n, C), "attn_bias": (n,),
        }
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ShapeError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @property
    def channels(self) -> int:
        return self.W.shape[0]

    @property
    def num_points(self) -> int:
        return self.attn_weight.shape[0]

    @classmethod
    def random(cls, channels: int, num_points: int = NUM_POINTS, rng=None,
               offset_scale: float = 0.5) -> "DeformableWeights":
        rng = np.random.default_rng(rng)
        s = 1.0 / np.sqrt(channels)
        return cls(
            W=rng.normal(0, s, (channels, channels)),
            offset_weight=rng.normal(0, s * offset_scale, (3 * num_points, channels)),
            offset_bias=rng.normal(0, offset_scale, 3 * num_points),
            attn_weight=rng.normal(0, s, (num_points, channels)),
            attn_bias=np.zeros(num_points),
        )

    @classmethod
    def degenerate(cls, channels: int, num_points: int = 1) -> "DeformableWeights":
        """Identity projection, zero offsets and uniform attention."""
        return cls(W=np.eye(channels), offset_weight=np.zeros((3 * num_points, channels)),
                   offset_bias=np.zeros(3 * num_points), attn_weight=np.zeros((num_points, channels)),
                   attn_bias=np.zeros(num_points))


@dataclass(frozen=True)
class DenseAttentionWeights:
    """Query/key projections for scaled dot-product scores plus the value projection ``W``."""

    query: np.ndarray
    key: np.ndarray
    W: np.ndarray

    @classmethod
    def random(cls, channels: int, rng=None) -> "DenseAttentionWeights":
        rng = np.random.default_rng(rng)
        s = 1.0 / np.sqrt(channels)
        return cls(*(rng.normal(0, s, (channels, channels)) for _ in range(3)))


@dataclass
class InstanceSet:
    """K instance feature rows, optionally paired with K x L class logits."""

    features: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ShapeError(f"instance features must be K*C with K >= 1, got {self.features.shape}")
        if self.logits is not None:
            self.logits = np.asarray(self.logits)
            if self.logits.ndim != 2 or self.logits.shape[0] != self.features.shape[0]:
                raise ShapeError("instance logits must share K with the features")

    @property
    def num_instances(self) -> int:
        return self.features.shape[0]


def _as_layers(w) -> list:
    return list(w) if isinstance(w, (list, tuple)) else [w]


def deformable_attention_weights(queries: np.ndarray, w: DeformableWeights) -> tuple[np.ndarray, np.ndarray]:
    """Per-query sampling offsets (M, N, 3) and softmax attention weights (M, N)."""
    q = np.asarray(queries, dtype=np.float64)
    offsets = (q @ w.offset_weight.T + w.offset_bias).reshape(q.shape[0], w.num_points, 3)
    attn = softmax_lastdim(q @ w.attn_weight.T + w.attn_bias)
    return offsets, attn


def _deformable_layer(queries, ref_points, volume, w: DeformableWeights, return_weights=False):
    if queries.shape[1] != volume.shape[3] or queries.shape[1] != w.channels:
        raise ShapeError(f"query channels {queries.shape[1]}, volume channels {volume.shape[3]}, "
                         f"weight channels {w.channels} disagree")
    offsets, attn = deformable_attention_weights(queries, w)
    sampled = trilinear_sample_many(volume, ref_points[:, None, :] + offsets)  # (M, N, C)
    mixed = np.einsum("mn,mnc->mc", attn, sampled)
    out = mixed @ np.asarray(w.W, dtype=np.float64).T
    return (out, attn) if return_weights else out


def deformable_cross_attention(queries: np.ndarray, query_positions: np.ndarray, kv_volume: np.ndarray,
                               w, project: Callable[[np.ndarray], np.ndarray] | None = None,
                               return_weights: bool = False):
    """Deformable cross-attention of M queries against a key/value volume.

    Each query at position ``x`` samples the volume at ``project(x) + offset_n``
    for its N predicted offsets and returns ``sum_n A_n W sample_n``. ``project``
    maps query positions into the volume's voxel coordinates (identity when the
    volume is the voxel grid itself; a camera projection when it is the
    frustum feature volume). ``w`` may be a sequence of per-layer weights, in
    which case each layer's output feeds the next layer as its queries.
    """
    q = np.asarray(queries, dtype=np.float64)
    pos = np.asarray(query_positions, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] != q.shape[0]:
        raise ShapeError(f"{q.shape[0]} queries but {pos.shape[0]} positions")
    ref = pos if project is None else np.asarray(project(pos), dtype=np.float64)
    weights = []
    for layer in _as_layers(w):
        q, attn = _deformable_layer(q, ref, kv_volume, layer, return_weights=True)
        weights.append(attn)
    return (q, weights) if return_weights else q


def scatter_to_volume(feats: np.ndarray, positions: np.ndarray, dims) -> np.ndarray:
    """Place per-voxel features at integer ``positions`` in an otherwise zero volume."""
    feats = np.asarray(feats)
    idx = np.asarray(positions).astype(np.int64).reshape(-1, 3)
    vol = np.zeros(tuple(dims) + (feats.shape[1],), dtype=np.float64)
    vol[tuple(idx.T)] = feats
    return vol


def deformable_self_attention(feats: np.ndarray, positions: np.ndarray, volume_view: np.ndarray,
                              w, return_weights: bool = False):
    """Deformable self-attention: queries sample their own voxel volume at ``x + offset``.

    For multi-layer ``w`` the volume is rebuilt from the updated features
    after every layer, so keys and values always come from the current queries.
    """
    q = np.asarray(feats, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    volume = np.asarray(volume_view, dtype=np.float64)
    layers = _as_layers(w)
    weights = []
    for i, layer in enumerate(layers):
        if i > 0:
            volume = volume.copy()
            volume[tuple(pos.astype(np.int64).T)] = q
        q, attn = _deformable_layer(q, pos, volume, layer, return_weights=True)
        weights.append(attn)
    return (q, weights) if return_weights else q


def strided_slots(count: int, k: int) -> list[np.ndarray]:
    """Split ``range(count)`` into ``k`` strided groups: slot ``j`` gets ``j, j+k, j+2k, ...``."""
    return [np.arange(j, count, k) for j in range(k)]


def init_instance_proposals(visible: np.ndarray, mask: np.ndarray, dsa, embeddings: np.ndarray) -> InstanceSet:
    """Instance proposals from visible voxels.

    Runs deformable self-attention over the visible voxels, mean-pools the
    outputs (ordered by linear voxel index) into K strided slots and adds the
    learnable embeddings ``embeddings`` (K, C). Slots that receive no voxel contribute
    a zero vector.
    """
    v = np.asarray(visible, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if mask.shape != v.shape[:3]:
        raise ShapeError(f"mask {mask.shape} does not match volume {v.shape[:3]}")
    if embeddings.ndim != 2 or embeddings.shape[0] < 1 or embeddings.shape[1] != v.shape[3]:
        raise ShapeError(f"instance embeddings must be K*C with C={v.shape[3]}, got {embeddings.shape}")
    pos = np.argwhere(mask)  # row-major, i.e. sorted by linear index
    if pos.shape[0] == 0:
        raise ValueError("no visible voxels")
    volume = np.where(mask[..., None], v, 0.0)
    out = deformable_self_attention(volume[tuple(pos.T)], pos, volume, dsa)
    pooled = np.zeros_like(embeddings)
    for j, rows in enumerate(strided_slots(pos.shape[0], embeddings.shape[0])):
        if rows.size:
            pooled[j] = out[rows].mean(axis=0)
    return InstanceSet(pooled + embeddings)


def init_voxel_proposals(visible: np.ndarray, invisible: np.ndarray, dsa) -> np.ndarray:
    """Voxel proposals: deformable self-attention over the merged visible + invisible volume."""
    a = np.asarray(visible, dtype=np.float64)
    b = np.asarray(invisible, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 4:
        raise ShapeError(f"visible {a.shape} and invisible {b.shape} volumes must match")
    merged = a + b
    pos = np.argwhere(np.ones(merged.shape[:3], dtype=bool))
    out = deformable_self_attention(merged.reshape(-1, merged.shape[3]), pos, merged, dsa)
    return out.reshape(merged.shape)


def _dense_attention(queries, keys, values, attn, W):
    """Shared body of the dense attention blocks; returns (output, weights)."""
    if isinstance(attn, DenseAttentionWeights):
        W = attn.W if W is None else W
        qp = queries @ np.asarray(attn.query, dtype=np.float64).T
        kp = keys @ np.asarray(attn.key, dtype=np.float64).T
        A = softmax_lastdim(qp @ kp.T / np.sqrt(queries.shape[1]))
    else:
        A = np.asarray(attn, dtype=np.float64)
        if A.shape != (queries.shape[0], keys.shape[0]):
            raise ShapeError(f"attention matrix {A.shape}, expected {(queries.shape[0], keys.shape[0])}")
    if W is None:
        raise ShapeError("a value projection W is required")
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (values.shape[1], values.shape[1]):
        raise ShapeError(f"projection W {W.shape} incompatible with C={values.shape[1]}")
    return (A @ values) @ W.T, A


def dense_cross_attention(instances: InstanceSet, voxel_feats: np.ndarray, attn, W=None,
                          return_weights: bool = False):
    """Instances attend over every voxel: ``out[k] = sum_n A[k, n] W voxel_feats[n]``.

    ``attn`` is either an explicit K x N weight matrix or a
    :class:`DenseAttentionWeights` (scaled dot-product scores, row softmax).
    A sequence of :class:`DenseAttentionWeights` applies several layers.
    """
    voxel_feats = np.asarray(voxel_feats, dtype=np.float64)
    if voxel_feats.ndim != 4:
        raise ShapeError(f"voxel features must be X*Y*Z*C, got {voxel_feats.shape}")
    values = voxel_feats.reshape(-1, voxel_feats.shape[3])
    q = np.asarray(instances.features, dtype=np.float64)
    if q.shape[1] != values.shape[1]:
        raise ShapeError(f"instance channels {q.shape[1]} != voxel channels {values.shape[1]}")
    weights = []
    for layer in _as_layers(attn):
        q, A = _dense_attention(q, values, values, layer, W)
        weights.append(A)
    result = InstanceSet(q, instances.logits)
    return (result, weights) if return_weights else result


def dense_self_attention(instances: InstanceSet, attn, W=None, return_weights: bool = False):
    """Self-attention among the K instances; keys and values are the instances themselves."""
    q = np.asarray(instances.features, dtype=np.float64)
    weights = []
    for layer in _as_layers(attn):
        q, A = _dense_attention(q, q, q, layer, W)
        weights.append(A)
    result = InstanceSet(q, instances.logits)
    return (result, weights) if return_weights else result


def encode_instances(instances: InstanceSet, mlp: Sequence[tuple[np.ndarray, np.ndarray]]) -> InstanceSet:
    """Per-instance MLP: ReLU after every layer except the last."""
    x = np.asarray(instances.features, dtype=np.float64)
    if not mlp:
        raise ShapeError("the MLP needs at least one layer")
    for i, (weight, bias) in enumerate(mlp):
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[1] != x.shape[1] or np.shape(bias) != (weight.shape[0],):
            raise ShapeError(f"layer {i}: weight {weight.shape} / bias {np.shape(bias)} "
                             f"incompatible with input width {x.shape[1]}")
        x = x @ weight.T + bias
        if i < len(mlp) - 1:
            x = np.maximum(x, 0.0)
    if x.shape[1] != instances.features.shape[1]:
        raise ShapeError(f"MLP output width {x.shape[1]} != C={instances.features.shape[1]}")
    return InstanceSet(x, instances.logits)
