"""Random panoptic scenes and pipeline fixtures for tests, selftest and demos."""
from __future__ import annotations

import numpy as np

from .decode import PanopticGrid
from .metrics import SEMANTIC_KITTI, ClassTaxonomy


def random_scene(rng, dims=(16, 16, 8), max_instances: int = 6,
                 taxonomy: ClassTaxonomy = SEMANTIC_KITTI) -> PanopticGrid:
    """Ground-truth-like grid: a few stuff slabs plus box-shaped thing instances."""
    rng = np.random.default_rng(rng)
    X, Y, Z = dims
    sem = np.zeros(dims, dtype=np.int64)
    inst = np.zeros(dims, dtype=np.int64)
    stuff = sorted(taxonomy.stuff_ids)
    things = sorted(taxonomy.thing_ids)
    ground = int(rng.integers(1, max(2, Z // 2)))
    sem[:, :, :ground] = rng.choice(stuff)
    for _ in range(int(rng.integers(0, 3))):
        x0, y0 = rng.integers(0, X), rng.integers(0, Y)
        sem[x0:x0 + rng.integers(1, X // 2 + 2), y0:y0 + rng.integers(1, Y // 2 + 2), ground:] = rng.choice(stuff)
    for k in range(int(rng.integers(0, max_instances + 1))):
        sx, sy, sz = (int(rng.integers(1, max(2, d // 3 + 1))) for d in dims)
        x0, y0 = int(rng.integers(0, X - sx + 1)), int(rng.integers(0, Y - sy + 1))
        z0 = int(rng.integers(0, Z - sz + 1))
        sem[x0:x0 + sx, y0:y0 + sy, z0:z0 + sz] = rng.choice(things)
        inst[x0:x0 + sx, y0:y0 + sy, z0:z0 + sz] = k + 1
    inst[~np.isin(sem, list(taxonomy.thing_ids))] = 0
    if rng.random() < 0.3:
        sem[rng.random(dims) < 0.02] = taxonomy.ignore_id
        inst[sem == taxonomy.ignore_id] = 0
    return PanopticGrid(sem, inst)


def perturb_scene(rng, gt: PanopticGrid, taxonomy: ClassTaxonomy = SEMANTIC_KITTI,
                  flip_rate: float = 0.1) -> PanopticGrid:
    """Prediction-like grid: shifted instances, relabelled voxels, dropped and spurious segments."""
    rng = np.random.default_rng(rng)
    sem = gt.semantic.astype(np.int64).copy()
    inst = gt.instance.astype(np.int64).copy()
    sem[sem == taxonomy.ignore_id] = 0
    shift = tuple(int(s) for s in rng.integers(-1, 2, 3))
    if rng.random() < 0.5:
        things = np.isin(sem, list(taxonomy.thing_ids))
        moved_sem = np.roll(np.where(things, sem, 0), shift, axis=(0, 1, 2))
        moved_inst = np.roll(np.where(things, inst, 0), shift, axis=(0, 1, 2))
        sem = np.where(things, 0, sem)
        inst = np.where(things, 0, inst)
        sem = np.where(moved_sem > 0, moved_sem, sem)
        inst = np.where(moved_sem > 0, moved_inst, inst)
    flip = rng.random(sem.shape) < flip_rate
    sem[flip] = rng.integers(0, taxonomy.num_classes, int(flip.sum()))
    if inst.max() > 0 and rng.random() < 0.3:
        drop = int(rng.integers(1, inst.max() + 1))
        sem[inst == drop] = 0
        inst[inst == drop] = 0
    # relabel instance IDs so the prediction never reuses ground-truth numbering
    perm = rng.permutation(np.arange(1, 64))
    inst = np.where(inst > 0, perm[np.clip(inst - 1, 0, 62)], 0)
    # flipped voxels that became things get a fresh spurious instance
    new_things = np.isin(sem, list(taxonomy.thing_ids)) & (inst == 0)
    inst[new_things] = 64
    inst[~np.isin(sem, list(taxonomy.thing_ids))] = 0
    return PanopticGrid(sem, inst)


def random_grid_pair(rng, dims=(16, 16, 8), max_instances: int = 6):
    rng = np.random.default_rng(rng)
    gt = random_scene(rng, dims, max_instances)
    return perturb_scene(rng, gt), gt


def blob_scene(dims=(24, 24, 8), class_id: int = 1, gap: int = 10) -> PanopticGrid:
    """Two separated 3x3x3 blobs of one thing class on a road plane; used as a clustering fixture."""
    sem = np.zeros(dims, dtype=np.int64)
    sem[:, :, 0] = 9
    sem[2:5, 2:5, 1:4] = class_id
    sem[2 + gap:5 + gap, 2:5, 1:4] = class_id
    return PanopticGrid.semantic_only(sem)
