"""Training-loss numerics with analytic gradients.

Every loss ``foo_loss`` has a companion ``foo_grad`` returning the gradient
with respect to its first argument, derived by hand. All computation is in
float64 so that central finite differences can verify the gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .geometry import CameraModel, DepthMap
from .matching import hungarian_assign

IGNORE_ID = 255
DICE_EPS = 1e-6
# floor for probabilities fed to log(); keeps losses finite at degenerate inputs
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    stage1: Mapping[str, float] = field(
        default_factory=lambda: {"ce": 1.0, "sem": 1.0, "geo": 1.0, "depth": 1e-4})
    stage2: Mapping[str, float] = field(
        default_factory=lambda: {"mask": 1.0, "dice": 1.0, "focal": 40.0, "depth": 1e-4})
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for table in (self.stage1, self.stage2):
            if any(w < 0 for w in table.values()):
                raise ValueError("loss weights must be non-negative")


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(x))


# ---------------------------------------------------------------- cross-entropy

def _ce_valid(logits, targets, ignore_id):
    logits = _f64(logits)
    targets = np.asarray(targets).astype(np.int64)
    valid = targets != ignore_id
    if not np.any(valid):
        raise ValueError("no supervised voxels")
    return logits, targets, valid


def ce_loss(logits, targets, ignore_id: int = IGNORE_ID) -> float:
    """Mean negative log-softmax of the target class over non-ignored rows."""
    logits, targets, valid = _ce_valid(logits, targets, ignore_id)
    lsm = _log_softmax(logits[valid])
    return float(-lsm[np.arange(lsm.shape[0]), targets[valid]].mean())


def ce_grad(logits, targets, ignore_id: int = IGNORE_ID) -> np.ndarray:
    logits, targets, valid = _ce_valid(logits, targets, ignore_id)
    grad = np.zeros_like(logits)
    n = int(valid.sum())
    probs = np.exp(_log_softmax(logits[valid]))
    probs[np.arange(n), targets[valid]] -= 1.0
    grad[valid] = probs / n
    return grad


# ---------------------------------------------------------------- scene-class affinity

def _scal_terms(q: np.ndarray, t: np.ndarray):
    """Loss and gradient (w.r.t. q) of one class's precision/recall/specificity terms.

    ``q`` holds per-voxel probabilities of the class, ``t`` the 0/1 targets.
    A term whose denominator is zero is skipped.
    """
    loss = 0.0
    grad = np.zeros_like(q)
    nom = float(np.dot(q, t))
    sp = float(q.sum())
    nt = float(t.sum())
    nf = float((1.0 - t).sum())
    if sp > 0:
        prec = nom / sp
        pc = max(prec, LOG_FLOOR)
        loss -= np.log(pc)
        if prec > LOG_FLOOR:
            grad -= (t * sp - nom) / sp**2 / prec
    if nt > 0:
        rec = nom / nt
        loss -= np.log(max(rec, LOG_FLOOR))
        if rec > LOG_FLOOR:
            grad -= t / nt / rec
    if nf > 0:
        spec = float(np.dot(1.0 - q, 1.0 - t)) / nf
        loss -= np.log(max(spec, LOG_FLOOR))
        if spec > LOG_FLOOR:
            grad += (1.0 - t) / nf / spec
    return loss, grad


def _scal(probs, targets, mode, ignore_id):
    probs = _f64(probs)
    targets = np.asarray(targets).astype(np.int64)
    valid = targets != ignore_id
    p = probs[valid]
    y = targets[valid]
    grad = np.zeros_like(probs)
    g = np.zeros_like(p)
    if mode == "semantic":
        total, count = 0.0, 0
        for c in range(p.shape[1]):
            t = (y == c).astype(np.float64)
            if t.sum() == 0:
                continue
            loss_c, grad_c = _scal_terms(p[:, c], t)
            total += loss_c
            g[:, c] += grad_c
            count += 1
        if count == 0:
            return 0.0, grad
        g /= count
        grad[valid] = g
        return total / count, grad
    if mode == "geometric":
        occ = 1.0 - p[:, 0]
        t = (y != 0).astype(np.float64)
        loss, grad_occ = _scal_terms(occ, t)
        g[:, 0] = -grad_occ
        grad[valid] = g
        return loss, grad
    raise ValueError(f"mode must be 'semantic' or 'geometric', got {mode!r}")


def scal_loss(probs, targets, mode: str = "semantic", ignore_id: int = IGNORE_ID) -> float:
    """Scene-class affinity loss over soft class probabilities (N, L).

    Semantic mode averages ``-(log P_c + log R_c + log S_c)`` over classes
    present in the targets. Geometric mode applies the same three terms once,
    to the occupied probability ``1 - p_free`` against occupied/free labels.
    """
    return float(_scal(probs, targets, mode, ignore_id)[0])


def scal_grad(probs, targets, mode: str = "semantic", ignore_id: int = IGNORE_ID) -> np.ndarray:
    return _scal(probs, targets, mode, ignore_id)[1]


# ---------------------------------------------------------------- dice

def dice_loss(probs, target_mask, eps: float = DICE_EPS) -> float:
    p = _f64(probs).ravel()
    g = np.asarray(target_mask, dtype=np.float64).ravel()
    return float(1.0 - 2.0 * np.dot(p, g) / (np.dot(p, p) + np.dot(g, g) + eps))


def dice_grad(probs, target_mask, eps: float = DICE_EPS) -> np.ndarray:
    p = _f64(probs)
    g = np.asarray(target_mask, dtype=np.float64).reshape(p.shape)
    num = float(np.sum(p * g))
    den = float(np.sum(p * p) + np.sum(g * g) + eps)
    return -2.0 * (g * den - 2.0 * p * num) / den**2


# ---------------------------------------------------------------- focal

def _focal_parts(logits, target_mask, alpha):
    x = _f64(logits)
    t = np.asarray(target_mask, dtype=bool).reshape(x.shape)
    sign = np.where(t, 1.0, -1.0)
    log_pt = _log_sigmoid(sign * x)
    alpha_t = np.where(t, alpha, 1.0 - alpha)
    return x, sign, log_pt, alpha_t


def focal_loss(logits, target_mask, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean sigmoid focal loss ``-alpha_t (1 - p_t)^gamma log p_t``."""
    x, _, log_pt, alpha_t = _focal_parts(logits, target_mask, alpha)
    pt = np.exp(log_pt)
    return float(np.mean(-alpha_t * (1.0 - pt) ** gamma * log_pt))


def focal_grad(logits, target_mask, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    x, sign, log_pt, alpha_t = _focal_parts(logits, target_mask, alpha)
    pt = np.exp(log_pt)
    # d p_t / d x = sign * p_t (1 - p_t)
    g = alpha_t * sign * (1.0 - pt) ** gamma * (gamma * pt * log_pt - (1.0 - pt))
    return g / x.size


# ---------------------------------------------------------------- mask cross-entropy

class MaskCE(NamedTuple):
    value: float
    no_matches: bool


def _bce_with_logits(x, t):
    return -(t * _log_sigmoid(x) + (1.0 - t) * _log_sigmoid(-x))


def mask_ce_loss(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> MaskCE:
    """Binary cross-entropy per matched (mask logits, gt mask) pair, averaged over pairs."""
    if len(pairs) == 0:
        return MaskCE(0.0, True)
    vals = [float(np.mean(_bce_with_logits(_f64(x), np.asarray(g, dtype=np.float64).reshape(np.shape(x)))))
            for x, g in pairs]
    return MaskCE(float(np.mean(vals)), False)


def mask_ce_grad(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    """Gradient w.r.t. each pair's logits."""
    out = []
    for x, g in pairs:
        x = _f64(x)
        t = np.asarray(g, dtype=np.float64).reshape(x.shape)
        out.append((_sigmoid(x) - t) / (x.size * len(pairs)))
    return out


# ---------------------------------------------------------------- depth

def depth_targets(gt_depth: DepthMap, cam: CameraModel) -> np.ndarray:
    """Index of the nearest bin center per pixel (-1 where invalid)."""
    bins = cam.depth_bins
    d = np.asarray(gt_depth.values, dtype=np.float64)
    idx = np.abs(d[..., None] - bins).argmin(axis=-1)
    return np.where(gt_depth.validity, idx, -1)


def _depth_setup(pred_bins, gt_depth, cam):
    p = _f64(pred_bins)
    if p.ndim != 3 or p.shape[:2] != gt_depth.values.shape or p.shape[2] != len(cam.depth_bins):
        raise ValueError(f"depth probabilities {p.shape} incompatible with depth map "
                         f"{gt_depth.values.shape} and {len(cam.depth_bins)} bins")
    tgt = depth_targets(gt_depth, cam)
    valid = tgt >= 0
    if not np.any(valid):
        raise ValueError("no valid depth pixels")
    return p, tgt, valid


def depth_loss(pred_bins, gt_depth: DepthMap, cam: CameraModel) -> float:
    """Cross-entropy of per-pixel depth-bin probabilities against the nearest-bin target."""
    p, tgt, valid = _depth_setup(pred_bins, gt_depth, cam)
    u, v = np.nonzero(valid)
    return float(-np.mean(np.log(np.maximum(p[u, v, tgt[u, v]], LOG_FLOOR))))


def depth_grad(pred_bins, gt_depth: DepthMap, cam: CameraModel) -> np.ndarray:
    p, tgt, valid = _depth_setup(pred_bins, gt_depth, cam)
    u, v = np.nonzero(valid)
    grad = np.zeros_like(p)
    sel = p[u, v, tgt[u, v]]
    grad[u, v, tgt[u, v]] = np.where(sel > LOG_FLOOR, -1.0 / (np.maximum(sel, LOG_FLOOR) * u.size), 0.0)
    return grad


# ---------------------------------------------------------------- stage objectives

def _weighted(components: Mapping[str, float], weights: Mapping[str, float]) -> float:
    missing = set(weights) - set(components)
    if missing:
        raise KeyError(f"missing loss components: {sorted(missing)}")
    return float(sum(weights[k] * components[k] for k in weights))


def stage1_loss(components: Mapping[str, float], weights: LossWeights | None = None) -> float:
    """Weighted semantic-completion objective over components ce, sem, geo, depth."""
    return _weighted(components, (weights or LossWeights()).stage1)


def stage2_loss(components: Mapping[str, float], weights: LossWeights | None = None) -> float:
    """Weighted panoptic objective over components mask, dice, focal, depth."""
    return _weighted(components, (weights or LossWeights()).stage2)


def match_masks(mask_logits, gt_masks, iou_threshold: float = 0.5) -> list[tuple[int, int]]:
    """Pair ground-truth masks with predicted masks (binarized at 0.5) by Hungarian matching.

    Returns (pred, gt) index pairs whose IoU exceeds the threshold.
    """
    logits = _f64(mask_logits)
    gts = np.asarray(gt_masks, dtype=bool)
    if logits.ndim != 2 or gts.ndim != 2 or logits.shape[1] != gts.shape[1]:
        raise ValueError(f"mask logits {logits.shape} and gt masks {gts.shape} disagree")
    pred_bin = logits > 0
    inter = pred_bin.astype(np.float64) @ gts.T.astype(np.float64)
    union = pred_bin.sum(1)[:, None] + gts.sum(1)[None, :] - inter
    ious = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    if ious.size == 0:
        return []
    bonus = min(ious.shape) + 1.0
    pairs = hungarian_assign(-(ious + bonus * (ious > 0.5)))
    return [(r, c) for r, c in pairs if ious[r, c] > iou_threshold]


def stage2_components(mask_logits, gt_masks, depth_component: float = 0.0,
                      weights: LossWeights | None = None, iou_threshold: float = 0.5) -> dict:
    """Mask-wise panoptic loss components after matching.

    Unmatched predictions contribute nothing. Dice and focal terms are averaged
    over matched pairs like the mask cross-entropy.
    """
    w = weights or LossWeights()
    logits = _f64(mask_logits)
    gts = np.asarray(gt_masks, dtype=bool)
    pairs = match_masks(logits, gts, iou_threshold)
    matched = [(logits[r], gts[c]) for r, c in pairs]
    mce = mask_ce_loss(matched)
    if mce.no_matches:
        dice = focal = 0.0
    else:
        dice = float(np.mean([dice_loss(_sigmoid(x), g) for x, g in matched]))
        focal = float(np.mean([focal_loss(x, g, w.focal_alpha, w.focal_gamma) for x, g in matched]))
    return {"mask": mce.value, "dice": dice, "focal": focal, "depth": float(depth_component),
            "pairs": pairs, "no_matches": mce.no_matches}


__all__ = [
    "LossWeights", "MaskCE", "ce_loss", "ce_grad", "scal_loss", "scal_grad", "dice_loss", "dice_grad",
    "focal_loss", "focal_grad", "mask_ce_loss", "mask_ce_grad", "depth_loss", "depth_grad",
    "depth_targets", "stage1_loss", "stage2_loss", "match_masks", "stage2_components",
]
