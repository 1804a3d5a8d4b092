"""DBSCAN instance extraction from semantic completion grids."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from .decode import PanopticGrid
from .geometry import GridSpec

NOISE = -1


@dataclass(frozen=True)
class ClusterParams:
    eps: float = 1.0
    min_pts: int = 8
    eps_units: str = "meters"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.eps_units not in ("meters", "voxels"):
            raise ValueError(f"eps_units must be 'meters' or 'voxels', got {self.eps_units!r}")


def region_queries(points: np.ndarray, eps: float) -> list[np.ndarray]:
    """Closed eps-neighborhoods (self included) of every point, as sorted index arrays.

    The KD-tree only proposes candidates; membership is decided by the exact
    test ``sum((a - b)**2) <= eps**2`` so results do not depend on the index.
    """
    tree = cKDTree(points)
    candidates = tree.query_ball_point(points, r=eps * (1.0 + 1e-9) + 1e-12)
    eps2 = eps * eps
    out = []
    for i, cand in enumerate(candidates):
        cand = np.asarray(sorted(cand), dtype=np.int64)
        d2 = np.sum((points[cand] - points[i]) ** 2, axis=1)
        out.append(cand[d2 <= eps2])
    return out


def dbscan(points, eps: float = 1.0, min_pts: int = 8) -> np.ndarray:
    """Density-based clustering; returns labels (-1 noise, 0..n-1 clusters) in input order.

    Points are visited in lexicographic (x, y, z) order, which fixes cluster
    numbering and decides which cluster a shared border point joins (the
    first one to reach it). The result is therefore independent of the input
    order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    sorted_pts = pts[order]
    neighbors = region_queries(sorted_pts, eps)
    is_core = np.array([nb.size >= min_pts for nb in neighbors])
    lab = np.full(n, NOISE, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not is_core[i]:
            continue
        visited[i] = True
        lab[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbors[j]:
                if lab[k] == NOISE:
                    lab[k] = cluster
                if is_core[k] and not visited[k]:
                    visited[k] = True
                    queue.append(k)
        cluster += 1
    labels[order] = lab
    return labels


def instances_from_ssc(semantic_grid: PanopticGrid | np.ndarray, grid: GridSpec, params: ClusterParams | None = None,
                       thing_classes: Iterable[int] = ()) -> PanopticGrid:
    """Derive instance IDs for thing classes by clustering each class's voxels.

    Clustering runs on integer voxel coordinates with eps rescaled to voxel
    units, which is exact for lattice distances. Instance IDs are 1-based and
    unique across classes, numbered by class then by cluster discovery order.
    Noise voxels and stuff voxels get instance 0; semantics are unchanged.
    """
    params = params or ClusterParams()
    semantic = semantic_grid.semantic if isinstance(semantic_grid, PanopticGrid) else np.asarray(semantic_grid)
    instance = np.zeros(semantic.shape, dtype=np.int64)
    eps = params.eps / grid.voxel_size if params.eps_units == "meters" else params.eps
    # voxel sizes read back from f32 headers are off by ~1e-8; lattice squared
    # distances are integers, so this slack cannot admit a farther neighbor
    eps *= 1.0 + 1e-6
    next_id = 1
    for cls in sorted(set(int(c) for c in thing_classes)):
        idx = np.argwhere(semantic == cls)
        if idx.shape[0] == 0:
            continue
        labels = dbscan(idx.astype(np.float64), eps, params.min_pts)
        found = labels[labels != NOISE]
        if found.size == 0:
            continue
        ids = labels + next_id
        keep = labels != NOISE
        instance[tuple(idx[keep].T)] = ids[keep]
        next_id += int(found.max()) + 1
    if next_id - 1 > np.iinfo(np.uint16).max:
        raise OverflowError("more instances than a 16-bit instance channel can hold")
    return PanopticGrid(semantic.copy(), instance)
