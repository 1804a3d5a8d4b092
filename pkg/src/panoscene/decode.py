"""Instance-voxel affinity and argmax panoptic aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import InstanceSet
from .geometry import upsample_trilinear
from .tensor import ShapeError, argmax_lastdim

FREE_ID = 0
IGNORE_ID = 255


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class AffinityVolume:
    """Raw voxel-instance ``scores`` (X, Y, Z, K) and their sigmoids ``probs``."""

    scores: np.ndarray
    probs: np.ndarray

    @property
    def num_instances(self) -> int:
        return self.scores.shape[-1]


@dataclass
class PanopticGrid:
    """Per-voxel semantic class IDs and 1-based instance IDs (0 = none)."""

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.uint16)
        self.instance = np.asarray(self.instance, dtype=np.uint16)
        if self.semantic.ndim != 3 or self.semantic.shape != self.instance.shape:
            raise ShapeError(f"semantic {self.semantic.shape} and instance {self.instance.shape} "
                             "grids must be matching X*Y*Z arrays")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.semantic.shape

    @classmethod
    def semantic_only(cls, semantic) -> "PanopticGrid":
        semantic = np.asarray(semantic)
        return cls(semantic, np.zeros(semantic.shape, dtype=np.uint16))

    def validate(self) -> None:
        """Raise ValueError if an instance ID sits on a free or ignore voxel."""
        bad = (self.instance != 0) & np.isin(self.semantic, (FREE_ID, IGNORE_ID))
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} free/ignore voxels carry an instance ID")

    def __eq__(self, other):
        if not isinstance(other, PanopticGrid):
            return NotImplemented
        return (np.array_equal(self.semantic, other.semantic)
                and np.array_equal(self.instance, other.instance))


def affinity_scores(voxel_feats: np.ndarray, inst_feats: InstanceSet | np.ndarray) -> AffinityVolume:
    """Dot product of every voxel feature with every instance feature, plus its sigmoid."""
    v = np.asarray(voxel_feats, dtype=np.float64)
    feats = np.asarray(inst_feats.features if isinstance(inst_feats, InstanceSet) else inst_feats, dtype=np.float64)
    if v.ndim != 4 or feats.ndim != 2 or v.shape[3] != feats.shape[1]:
        raise ShapeError(f"voxel features {v.shape} and instance features {feats.shape} disagree on C")
    scores = v @ feats.T
    return AffinityVolume(scores, sigmoid(scores))


def voxel_logits(probs: np.ndarray, class_logits: np.ndarray) -> np.ndarray:
    """Class scores per voxel: instance class logits weighted by the voxel's instance probabilities.

    These are confidence-weighted sums, not class probabilities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    class_logits = np.asarray(class_logits, dtype=np.float64)
    if class_logits.ndim != 2 or probs.shape[-1] != class_logits.shape[0]:
        raise ShapeError(f"affinity K={probs.shape[-1]} does not match logits {class_logits.shape}")
    return probs @ class_logits


def panoptic_aggregate(aff: AffinityVolume, class_logits: np.ndarray, upsample_factor: int = 1) -> PanopticGrid:
    """Assign every voxel a semantic class and an instance by argmax.

    Semantic IDs come from the argmax of :func:`voxel_logits` over classes and
    instance IDs from ``1 + argmax`` of the instance probabilities. With
    ``upsample_factor > 1`` both are trilinearly upsampled before the argmaxes.
    Voxels that resolve to the free class get instance 0.
    """
    probs = np.asarray(aff.probs, dtype=np.float64)
    voxel_scores = voxel_logits(probs, class_logits)
    if upsample_factor != 1:
        voxel_scores = upsample_trilinear(voxel_scores, upsample_factor)
        probs = upsample_trilinear(probs, upsample_factor)
    semantic = argmax_lastdim(voxel_scores)
    instance = argmax_lastdim(probs) + 1
    instance[semantic == FREE_ID] = 0
    return PanopticGrid(semantic, instance)
