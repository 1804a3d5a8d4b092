"""Dense float32 arrays and the sampling primitives shared by every stage.

Arrays are plain :class:`numpy.ndarray` objects in C (last-axis-fastest)
order. :func:`as_tensor` is the gate used at file-load boundaries; internal
operations assume finite inputs.
"""
from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when array extents do not satisfy an operation's contract."""


def as_tensor(data, shape=None) -> Tensor:
    """Convert ``data`` to a finite float32 array, optionally reshaping it.

    Raises:
        ShapeError: if ``shape`` does not match the element count or any
            extent is < 1.
        ValueError: if the data holds NaN or Inf.
    """
    arr = np.asarray(data, dtype=np.float32)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if any(s < 1 for s in arr.shape):
        raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return np.ascontiguousarray(arr)


def _require_rank4(volume: np.ndarray) -> None:
    if volume.ndim != 4:
        raise ShapeError(f"expected a rank-4 X*Y*Z*C volume, got shape {volume.shape}")


def trilinear_sample_many(volume: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Trilinearly sample ``volume`` (X, Y, Z, C) at ``points`` (..., 3).

    Coordinates are in voxel units with node ``i`` at coordinate ``i``. Points
    outside ``[0, extent - 1]`` are clamped to the boundary first. The blend is
    carried out in float64; the result has shape ``points.shape[:-1] + (C,)``.
    """
    _require_rank4(volume)
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ShapeError(f"points must end in a length-3 axis, got {pts.shape}")
    lead = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    vol = np.asarray(volume, dtype=np.float64)
    hi = np.array(vol.shape[:3], dtype=np.float64) - 1.0
    pts = np.clip(pts, 0.0, hi)

    base = np.floor(pts).astype(np.int64)
    # keep the upper corner inside the grid; the weight on it is then 0 at the face
    base = np.minimum(base, np.maximum(np.array(vol.shape[:3]) - 2, 0))
    frac = pts - base
    upper = np.minimum(base + 1, np.array(vol.shape[:3]) - 1)

    out = np.zeros((pts.shape[0], vol.shape[3]), dtype=np.float64)
    for dx in (0, 1):
        ix = upper[:, 0] if dx else base[:, 0]
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            iy = upper[:, 1] if dy else base[:, 1]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                iz = upper[:, 2] if dz else base[:, 2]
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                out += (wx * wy * wz)[:, None] * vol[ix, iy, iz]
    return out.reshape(lead + (vol.shape[3],))


def trilinear_sample(volume: np.ndarray, point) -> np.ndarray:
    """Sample a single continuous voxel coordinate; returns a C-vector."""
    return trilinear_sample_many(volume, np.asarray(point, dtype=np.float64)[None])[0]


def softmax_lastdim(t: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    t = np.asarray(t)
    shifted = t - np.max(t, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def argmax_lastdim(t: np.ndarray) -> np.ndarray:
    """Index of the maximum along the last axis; ties resolve to the lowest index."""
    # np.argmax returns the first occurrence, which is the required tie-break
    return np.argmax(np.asarray(t), axis=-1)
