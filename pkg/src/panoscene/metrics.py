"""Panoptic quality (PQ, SQ, RQ, PQ-dagger) and semantic completion IoU/mIoU."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decode import FREE_ID, IGNORE_ID, PanopticGrid
from .matching import Segment, match_segments
from .tensor import ShapeError

CLASS_NAMES = (
    "free", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist",
    "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building", "fence",
    "vegetation", "trunk", "terrain", "pole", "traffic-sign",
)


@dataclass(frozen=True)
class ClassTaxonomy:
    names: tuple[str, ...] = CLASS_NAMES
    thing_ids: frozenset = frozenset(range(1, 9))
    stuff_ids: frozenset = frozenset(range(9, 20))
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        if self.thing_ids & self.stuff_ids:
            raise ValueError("thing and stuff classes overlap")
        if {FREE_ID, self.ignore_id} & (self.thing_ids | self.stuff_ids):
            raise ValueError("free and ignore IDs cannot be thing or stuff classes")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def name(self, class_id: int) -> str:
        return self.names[class_id] if 0 <= class_id < len(self.names) else str(class_id)

    def is_thing(self, class_id: int) -> bool:
        return class_id in self.thing_ids


SEMANTIC_KITTI = ClassTaxonomy()


@dataclass
class ClassScore:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    iou_sum: float

    def to_json(self) -> dict:
        return {"pq": self.pq, "sq": self.sq, "rq": self.rq}


@dataclass
class MetricsReport:
    """Per-class scores plus group means; all values are fractions in [0, 1]."""

    per_class: dict[int, ClassScore] = field(default_factory=dict)
    # a group with no class to average over holds None instead of a number
    groups: dict[str, dict[str, float | None]] = field(default_factory=dict)
    pq_dagger: dict[str, float | None] = field(default_factory=dict)
    iou: float | None = None
    miou: float | None = None

    def to_json(self, taxonomy: ClassTaxonomy = SEMANTIC_KITTI) -> dict:
        """Report schema with every value scaled by 100 and rounded to 2 decimals."""
        def pct(x):
            return None if x is None else round(100.0 * x, 2)

        doc = {"per_class": {taxonomy.name(c): {k: pct(v) for k, v in s.to_json().items()}
                             for c, s in sorted(self.per_class.items())}}
        for g in ("all", "thing", "stuff"):
            doc[g] = {k: pct(v) for k, v in self.groups.get(g, {}).items()}
        doc["pq_dagger"] = {k: pct(v) for k, v in self.pq_dagger.items()}
        doc["iou"] = None if self.iou is None else pct(self.iou)
        doc["miou"] = None if self.miou is None else pct(self.miou)
        return doc


def segments_from_grid(g: PanopticGrid, taxonomy: ClassTaxonomy = SEMANTIC_KITTI) -> list[Segment]:
    """Split a panoptic grid into segments.

    Thing voxels form one segment per (class, instance ID); thing voxels with
    instance 0 belong to no segment. Each stuff class present forms a single
    segment regardless of instance IDs. Free and ignore voxels are skipped.
    """
    sem = g.semantic.ravel().astype(np.int64)
    inst = g.instance.ravel().astype(np.int64)
    segments = []
    for cls in np.unique(sem):
        cls = int(cls)
        if cls in (FREE_ID, taxonomy.ignore_id):
            continue
        where = np.flatnonzero(sem == cls)
        if taxonomy.is_thing(cls):
            ids = inst[where]
            for iid in np.unique(ids):
                if iid != 0:
                    segments.append(Segment(cls, where[ids == iid]))
        elif cls in taxonomy.stuff_ids:
            segments.append(Segment(cls, where))
    return segments


def _mask_ignored(segments: list[Segment], ignored: np.ndarray) -> list[Segment]:
    if ignored.size == 0:
        return segments
    out = []
    for s in segments:
        keep = s.voxels[~np.isin(s.voxels, ignored, assume_unique=True)]
        if keep.size:
            out.append(Segment(s.class_id, keep))
    return out


def thresholds_for(mode: str, taxonomy: ClassTaxonomy, threshold: float = 0.5) -> dict[str, float]:
    """Per-group IoU thresholds: strict and custom use ``threshold`` everywhere; dagger admits any overlap for stuff."""
    if mode in ("strict", "custom"):
        return {"thing": threshold, "stuff": threshold}
    if mode in ("dagger", "pq_dagger"):
        return {"thing": threshold, "stuff": 0.0}
    raise ValueError(f"unknown threshold mode {mode!r}")


def _group_mean(scores: dict[int, ClassScore], ids, mean_mode: str) -> dict[str, float | None]:
    ids = sorted(ids)
    if mean_mode == "present":
        ids = [c for c in ids if c in scores]
    elif mean_mode != "all":
        raise ValueError(f"mean_mode must be 'present' or 'all', got {mean_mode!r}")
    if not ids:
        return {"pq": None, "sq": None, "rq": None}
    zero = ClassScore(0.0, 0.0, 0.0, 0, 0, 0, 0.0)
    rows = [scores.get(c, zero) for c in ids]
    return {k: float(np.mean([getattr(r, k) for r in rows])) for k in ("pq", "sq", "rq")}


def panoptic_quality(preds: list[Segment], gts: list[Segment], taxonomy: ClassTaxonomy = SEMANTIC_KITTI,
                     threshold_mode: str = "strict", threshold: float = 0.5,
                     mean_mode: str = "present") -> MetricsReport:
    """Per-class PQ/SQ/RQ and All/Thing/Stuff means.

    Classes with no segment in either list are left out of the means under
    ``mean_mode="present"``; ``"all"`` counts them as zero. A group left with
    no classes reports None rather than a score.
    """
    thr = thresholds_for(threshold_mode, taxonomy, threshold)
    scores: dict[int, ClassScore] = {}
    classes = sorted({s.class_id for s in preds} | {s.class_id for s in gts})
    for cls in classes:
        if cls not in taxonomy.thing_ids and cls not in taxonomy.stuff_ids:
            continue
        p = [s for s in preds if s.class_id == cls]
        g = [s for s in gts if s.class_id == cls]
        tau = thr["thing"] if taxonomy.is_thing(cls) else thr["stuff"]
        rep = match_segments(p, g, tau)
        tp, fp, fn = len(rep.tp), len(rep.fp), len(rep.fn)
        iou_sum = float(sum(iou for _, _, iou in rep.tp))
        denom = tp + 0.5 * fp + 0.5 * fn
        pq = iou_sum / denom if denom else 0.0
        sq = iou_sum / tp if tp else 0.0
        rq = tp / denom if denom else 0.0
        scores[cls] = ClassScore(pq, sq, rq, tp, fp, fn, iou_sum)
    report = MetricsReport(per_class=scores)
    report.groups = {
        "all": _group_mean(scores, taxonomy.thing_ids | taxonomy.stuff_ids, mean_mode),
        "thing": _group_mean(scores, taxonomy.thing_ids, mean_mode),
        "stuff": _group_mean(scores, taxonomy.stuff_ids, mean_mode),
    }
    return report


def ssc_iou_miou(pred_sem, gt_sem, taxonomy: ClassTaxonomy = SEMANTIC_KITTI) -> tuple[float, float]:
    """Occupancy IoU and mean per-class IoU, skipping voxels labelled ignore in the ground truth.

    A class absent from the ground truth scores 0 if predicted and is left out
    of the mean if it is absent from both.
    """
    pred = np.asarray(pred_sem).astype(np.int64)
    gt = np.asarray(gt_sem).astype(np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = gt != taxonomy.ignore_id
    pred, gt = pred[valid], gt[valid]
    po, go = pred != FREE_ID, gt != FREE_ID
    union = np.sum(po | go)
    iou = float(np.sum(po & go) / union) if union else 1.0
    per_class = []
    for c in range(1, taxonomy.num_classes):
        pc, gc = pred == c, gt == c
        u = np.sum(pc | gc)
        if u:
            per_class.append(np.sum(pc & gc) / u)
    miou = float(np.mean(per_class)) if per_class else 1.0
    return iou, miou


def evaluate(pred: PanopticGrid, gt: PanopticGrid, taxonomy: ClassTaxonomy = SEMANTIC_KITTI,
             mode: str = "strict", threshold: float = 0.5, mean_mode: str = "present") -> MetricsReport:
    """Full report: main-mode PQ per class and group, PQ-dagger groups, IoU and mIoU.

    Voxels labelled ignore in the ground truth are removed from predicted segments.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    ignored = np.flatnonzero(gt.semantic.ravel() == taxonomy.ignore_id)
    ps = _mask_ignored(segments_from_grid(pred, taxonomy), ignored)
    gs = segments_from_grid(gt, taxonomy)
    report = panoptic_quality(ps, gs, taxonomy, mode, threshold, mean_mode)
    dagger = panoptic_quality(ps, gs, taxonomy, "dagger", 0.5, mean_mode)
    report.pq_dagger = {g: v["pq"] for g, v in dagger.groups.items()}
    report.iou, report.miou = ssc_iou_miou(pred.semantic, gt.semantic, taxonomy)
    return report
