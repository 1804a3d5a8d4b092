"""Mask IoU, optimal linear assignment and thresholded segment matching."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Segment:
    """A labelled voxel set: ``voxels`` are strictly increasing linear voxel indices."""

    class_id: int
    voxels: np.ndarray

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.int64).ravel()
        if vox.size == 0:
            raise ValueError("a segment needs at least one voxel")
        if vox.size > 1 and np.any(np.diff(vox) <= 0):
            raise ValueError("segment voxels must be strictly increasing")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "class_id", int(self.class_id))

    @classmethod
    def from_indices(cls, class_id: int, indices) -> "Segment":
        return cls(class_id, np.unique(np.asarray(indices, dtype=np.int64)))

    def __len__(self) -> int:
        return self.voxels.size


@dataclass
class MatchReport:
    tp: list[tuple[int, int, float]] = field(default_factory=list)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"tp": [{"pred": p, "gt": g, "iou": iou} for p, g, iou in self.tp],
                "fp": list(self.fp), "fn": list(self.fn)}


def intersection_size(a: Segment, b: Segment) -> int:
    return int(np.intersect1d(a.voxels, b.voxels, assume_unique=True).size)


def mask_iou(a: Segment, b: Segment) -> float:
    inter = intersection_size(a, b)
    return inter / (len(a) + len(b) - inter)


def iou_matrix(preds: Sequence[Segment], gts: Sequence[Segment]) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = mask_iou(p, g)
    return out


def _assign_rows_le_cols(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method for n rows <= m columns.

    Returns ``col_of_row`` (length n). Row and column potentials are kept so
    that reduced costs stay non-negative; each row is inserted by growing an
    alternating tree over columns until a free column is reached.
    """
    n, m = cost.shape
    INF = np.inf
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row matched to column j (0 = free)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))  # lowest column on ties
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian_assign(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of ``min(R, C)`` (row, col) pairs, sorted by row."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    R, C = cost.shape
    if R <= C:
        cols = _assign_rows_le_cols(cost)
        return [(r, int(c)) for r, c in enumerate(cols)]
    rows = _assign_rows_le_cols(cost.T)
    return sorted((int(r), c) for c, r in enumerate(rows))


def assignment_cost(cost, pairs) -> float:
    """Total cost of ``pairs``, correctly rounded so it does not depend on pair order."""
    cost = np.asarray(cost, dtype=np.float64)
    return math.fsum(float(cost[r, c]) for r, c in pairs)


def _match_class(ious: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    # pairs above 0.5 are unique, so a bonus larger than any achievable IoU sum
    # forces all of them into the assignment; the rest maximizes total IoU
    bonus = min(ious.shape) + 1.0
    cost = -(ious + bonus * (ious > 0.5))
    return [(r, c) for r, c in hungarian_assign(cost) if ious[r, c] > threshold]


def match_segments(preds: Sequence[Segment], gts: Sequence[Segment], iou_threshold: float = 0.5) -> MatchReport:
    """Match predicted to ground-truth segments of the same class.

    Per class one optimal assignment maximizing total IoU is computed (pairs
    with IoU > 0.5 are always kept, making the result identical to greedy
    unique matching at thresholds >= 0.5). Pairs whose IoU does not exceed
    ``iou_threshold`` are demoted to a false positive plus a false negative.
    The assignment does not depend on the threshold, so lowering it can only
    add true positives.
    """
    if not 0.0 <= iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1), got {iou_threshold}")
    by_class_p = defaultdict(list)
    by_class_g = defaultdict(list)
    for i, s in enumerate(preds):
        by_class_p[s.class_id].append(i)
    for j, s in enumerate(gts):
        by_class_g[s.class_id].append(j)

    report = MatchReport()
    matched_p, matched_g = set(), set()
    for cls in sorted(set(by_class_p) & set(by_class_g)):
        pi, gi = by_class_p[cls], by_class_g[cls]
        ious = iou_matrix([preds[i] for i in pi], [gts[j] for j in gi])
        for r, c in _match_class(ious, iou_threshold):
            report.tp.append((pi[r], gi[c], float(ious[r, c])))
            matched_p.add(pi[r])
            matched_g.add(gi[c])
    report.tp.sort()
    report.fp = [i for i in range(len(preds)) if i not in matched_p]
    report.fn = [j for j in range(len(gts)) if j not in matched_g]
    return report
