"""Slow reference implementations used to cross-check the fast paths.

Written deliberately as scalar loops and exhaustive searches, sharing no code
with the modules they check.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def trilinear_corners(volume, point):
    X, Y, Z, C = volume.shape
    p = [min(max(float(point[a]), 0.0), volume.shape[a] - 1.0) for a in range(3)]
    out = [0.0] * C
    for corner in itertools.product((0, 1), repeat=3):
        w = 1.0
        idx = []
        for a in range(3):
            lo = int(math.floor(p[a]))
            t = p[a] - lo
            i = lo + corner[a]
            w *= t if corner[a] else (1.0 - t)
            idx.append(min(i, volume.shape[a] - 1))
        if w == 0.0:
            continue
        for c in range(C):
            out[c] += w * float(volume[idx[0], idx[1], idx[2], c])
    return np.array(out)


def voxelize_loop(frustum_feats, K, image_size, depth_bins, dims, voxel_size, origin):
    H, W, D, C = frustum_feats.shape
    Kinv = np.linalg.inv(np.asarray(K, dtype=np.float64).reshape(4, 4))
    out = np.zeros(tuple(dims) + (C,))
    su, sv = image_size[0] / H, image_size[1] / W
    for i in range(H):
        for j in range(W):
            u = (i + 0.5) * su - 0.5
            v = (j + 0.5) * sv - 0.5
            for d in range(D):
                z = float(depth_bins[d])
                cam = Kinv @ np.array([u * z, v * z, z, 1.0])
                p = cam[:3] / cam[3]
                idx = [int(math.floor((p[a] - origin[a]) / voxel_size)) for a in range(3)]
                if all(0 <= idx[a] < dims[a] for a in range(3)):
                    for c in range(C):
                        out[idx[0], idx[1], idx[2], c] += float(frustum_feats[i, j, d, c])
    return out


def best_assignment_cost(cost) -> float:
    """Exhaustive minimum over all injective row->column maps (rows <= cols after transposing)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return 0.0
    if cost.shape[0] > cost.shape[1]:
        cost = cost.T
    R, C = cost.shape
    best = math.inf
    for cols in itertools.permutations(range(C), R):
        # exact rounding of the true sum, independent of orientation and order
        total = math.fsum(float(cost[r, cols[r]]) for r in range(R))
        best = min(best, total)
    return best


def naive_dbscan(points, eps, min_pts):
    """O(n^2) DBSCAN with the same visiting order (lexicographic by x, y, z)."""
    pts = [tuple(float(c) for c in p) for p in np.asarray(points).reshape(-1, 3)]
    n = len(pts)
    order = sorted(range(n), key=lambda i: pts[i])
    eps2 = eps * eps

    def close(a, b):
        return sum((pts[a][k] - pts[b][k]) ** 2 for k in range(3)) <= eps2

    nbrs = {i: [j for j in range(n) if close(i, j)] for i in range(n)}
    core = {i for i in range(n) if len(nbrs[i]) >= min_pts}
    labels = [-1] * n
    cid = 0
    for i in order:
        if labels[i] != -1 or i not in core:
            continue
        stack = [i]
        labels[i] = cid
        seen = {i}
        while stack:
            j = stack.pop()
            for k in nbrs[j]:
                if labels[k] == -1:
                    labels[k] = cid
                if k in core and k not in seen:
                    seen.add(k)
                    stack.append(k)
        cid += 1
    return np.array(labels)


def canonical_partition(labels):
    """Set of frozensets (one per cluster) plus the noise set; label values are discarded."""
    labels = list(labels)
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, set()).add(i)
    noise = frozenset(groups.pop(-1, set()))
    return frozenset(frozenset(g) for g in groups.values()), noise


def aggregate_brute(probs, class_logits):
    """Per-voxel recomputation of the weighted class scores and both argmaxes."""
    X, Y, Z, K = probs.shape
    L = class_logits.shape[1]
    sem = np.zeros((X, Y, Z), dtype=np.int64)
    inst = np.zeros((X, Y, Z), dtype=np.int64)
    for x in range(X):
        for y in range(Y):
            for z in range(Z):
                best_l, best_v = 0, -math.inf
                for ell in range(L):
                    s = 0.0
                    for k in range(K):
                        s += float(probs[x, y, z, k]) * float(class_logits[k, ell])
                    if s > best_v:
                        best_l, best_v = ell, s
                best_k, best_h = 0, -math.inf
                for k in range(K):
                    if probs[x, y, z, k] > best_h:
                        best_k, best_h = k, probs[x, y, z, k]
                sem[x, y, z] = best_l
                inst[x, y, z] = 0 if best_l == 0 else best_k + 1
    return sem, inst


def _softmax_list(scores):
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    t = sum(e)
    return [v / t for v in e]


def deformable_loop(queries, ref_points, volume, W, offset_weight, offset_bias, attn_weight, attn_bias):
    """One deformable attention layer, one query and one sample point at a time."""
    M, C = queries.shape
    N = attn_weight.shape[0]
    out = np.zeros((M, C))
    for m in range(M):
        q = queries[m]
        scores = [float(np.dot(attn_weight[n], q) + attn_bias[n]) for n in range(N)]
        A = _softmax_list(scores)
        acc = np.zeros(C)
        for n in range(N):
            off = [float(np.dot(offset_weight[3 * n + a], q) + offset_bias[3 * n + a]) for a in range(3)]
            s = trilinear_corners(volume, [ref_points[m][a] + off[a] for a in range(3)])
            acc += A[n] * s
        for c in range(C):
            out[m, c] = sum(W[c, k] * acc[k] for k in range(C))
    return out


def dense_attention_matmul(queries, keys, values, Wq, Wk, W):
    q = queries @ Wq.T
    k = keys @ Wk.T
    scores = q @ k.T / math.sqrt(queries.shape[1])
    A = np.array([_softmax_list(list(row)) for row in scores])
    return A @ values @ W.T


def pq_from_counts(iou_sum, tp, fp, fn):
    denom = tp + 0.5 * fp + 0.5 * fn
    return (iou_sum / denom if denom else 0.0, iou_sum / tp if tp else 0.0, tp / denom if denom else 0.0)


def greedy_unique_match(preds, gts, threshold=0.5):
    """Matches every same-class pair with IoU above ``threshold`` (unique when threshold >= 0.5)."""
    pairs = []
    for i, p in enumerate(preds):
        ps = set(p.voxels.tolist())
        for j, g in enumerate(gts):
            if p.class_id != g.class_id:
                continue
            gs = set(g.voxels.tolist())
            iou = len(ps & gs) / len(ps | gs)
            if iou > threshold:
                pairs.append((i, j))
    return sorted(pairs)
