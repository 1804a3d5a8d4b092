"""Camera model, frustum lifting, voxelization and visibility splitting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError

# working resolution is half the ground-truth grid; voxel size doubles accordingly
GT_DIMS = (256, 256, 32)
GT_VOXEL_SIZE = 0.2
WORK_DIMS = (128, 128, 16)
WORK_VOXEL_SIZE = 0.4
DEFAULT_DEPTH_RANGE = (2.0, 54.0)
DEFAULT_DEPTH_BINS = 64


def uniform_depth_bins(n: int = DEFAULT_DEPTH_BINS, near: float = DEFAULT_DEPTH_RANGE[0],
                       far: float = DEFAULT_DEPTH_RANGE[1]) -> np.ndarray:
    """Bin-center depths for ``n`` equal-width bins covering ``[near, far]``."""
    width = (far - near) / n
    return near + width * (np.arange(n) + 0.5)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a 4x4 intrinsic matrix and a depth-bin table.

    ``image_size`` is ``(U, V)``: the extent along the first (u) and second
    (v) pixel axes of every image-space array in this package.
    """

    K: np.ndarray
    image_size: tuple[int, int]
    depth_bins: np.ndarray = field(default_factory=uniform_depth_bins)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(4, 4)
        bins = np.asarray(self.depth_bins, dtype=np.float64).ravel()
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths K[0][0] and K[1][1] must be positive")
        if bins.size == 0 or np.any(bins <= 0) or np.any(np.diff(bins) <= 0):
            raise ValueError("depth_bins must be positive and strictly increasing")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "depth_bins", bins)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @classmethod
    def from_json(cls, path) -> "CameraModel":
        doc = json.loads(Path(path).read_text())
        K = doc["K"]
        if len(K) != 16:
            raise ValueError(f"K must hold 16 row-major numbers, got {len(K)}")
        bins = doc.get("depth_bins")
        return cls(K=np.array(K, dtype=np.float64), image_size=(doc["width"], doc["height"]),
                   depth_bins=uniform_depth_bins() if bins is None else bins)

    def to_json(self) -> dict:
        return {"K": [float(v) for v in self.K.ravel()], "width": self.image_size[0],
                "height": self.image_size[1], "depth_bins": [float(b) for b in self.depth_bins]}

    def project(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame points (..., 3) to (u, v, depth)."""
        p = np.asarray(points, dtype=np.float64)
        hom = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
        img = hom @ self.K.T
        z = img[..., 2]
        return np.stack([img[..., 0] / z, img[..., 1] / z, z], axis=-1)

    def unproject(self, u, v, depth) -> np.ndarray:
        """Inverse projection of pixel coordinates at metric depth; returns (..., 3)."""
        u, v, depth = np.broadcast_arrays(np.asarray(u, dtype=np.float64),
                                          np.asarray(v, dtype=np.float64),
                                          np.asarray(depth, dtype=np.float64))
        img = np.stack([u * depth, v * depth, depth, np.ones_like(depth)], axis=-1)
        cam = img @ np.linalg.inv(self.K).T
        return cam[..., :3] / cam[..., 3:4]


@dataclass(frozen=True)
class GridSpec:
    """Voxel lattice: ``dims`` counts, ``voxel_size`` meters, ``origin`` of the (0,0,0) corner."""

    dims: tuple[int, int, int] = WORK_DIMS
    voxel_size: float = WORK_VOXEL_SIZE
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be three positive counts, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def quantize(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel indices ``floor((p - origin) / voxel_size)`` for (..., 3) points."""
        p = np.asarray(points, dtype=np.float64)
        return np.floor((p - np.asarray(self.origin)) / self.voxel_size).astype(np.int64)

    def contains(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def voxel_centers(self, idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def scaled(self, factor: int) -> "GridSpec":
        """Grid covering the same extent with ``factor``-times finer voxels."""
        return GridSpec(tuple(d * factor for d in self.dims), self.voxel_size / factor, self.origin)


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ShapeError(f"depth map must be rank 2, got {values.shape}")
        if self.validity is None:
            validity = np.isfinite(values) & (values > 0)
        else:
            validity = np.asarray(self.validity, dtype=bool)
            if validity.shape != values.shape:
                raise ShapeError("validity mask shape differs from depth values")
            if np.any(~(np.isfinite(values[validity]) & (values[validity] > 0))):
                raise ValueError("valid depth entries must be finite and positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "validity", validity)


def unproject_depth(depth: DepthMap, cam: CameraModel) -> np.ndarray:
    """Pseudo point cloud (P, 3), one point per valid pixel in row-major pixel order."""
    if tuple(depth.values.shape) != tuple(cam.image_size):
        raise ShapeError(f"depth map {depth.values.shape} does not match image size {cam.image_size}")
    u, v = np.nonzero(depth.validity)
    if u.size == 0:
        return np.zeros((0, 3))
    return cam.unproject(u, v, depth.values[u, v])


def lift_features(pixel_feats: np.ndarray, depth_probs: np.ndarray) -> np.ndarray:
    """Spread (H, W, C) pixel features along depth: ``out[u,v,d,c] = pixel_feats[u,v,c] * depth_probs[u,v,d]``."""
    pixel_feats = np.asarray(pixel_feats)
    depth_probs = np.asarray(depth_probs)
    if pixel_feats.ndim != 3 or depth_probs.ndim != 3 or pixel_feats.shape[:2] != depth_probs.shape[:2]:
        raise ShapeError(f"incompatible feature {pixel_feats.shape} and depth-probability {depth_probs.shape} shapes")
    return (pixel_feats[:, :, None, :] * depth_probs[:, :, :, None]).astype(np.float32)


def feature_pixel_coords(h: int, w: int, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Image-plane coordinates of feature-map cell centers.

    A feature map coarser than the image is mapped by matching cell centers;
    for ``h == U`` and ``w == V`` this is the identity.
    """
    su = cam.image_size[0] / h
    sv = cam.image_size[1] / w
    return (np.arange(h) + 0.5) * su - 0.5, (np.arange(w) + 0.5) * sv - 0.5


def frustum_voxel_indices(shape_hwd: tuple[int, int, int], cam: CameraModel,
                          grid: GridSpec) -> np.ndarray:
    """Voxel index (H, W, D, 3) reached by each frustum cell through the inverse projection."""
    h, w, d = shape_hwd
    if d != len(cam.depth_bins):
        raise ShapeError(f"volume has {d} depth bins, camera defines {len(cam.depth_bins)}")
    us, vs = feature_pixel_coords(h, w, cam)
    U, V, Dep = np.meshgrid(us, vs, cam.depth_bins, indexing="ij")
    return grid.quantize(cam.unproject(U, V, Dep))


def voxelize(frustum_feats: np.ndarray, cam: CameraModel, grid: GridSpec) -> np.ndarray:
    """Sum frustum features (H, W, D, C) into the voxel grid (X, Y, Z, C).

    Cells that land outside the grid are dropped; voxels no cell reaches stay
    zero. Accumulation runs in float64 in row-major cell order.
    """
    frustum_feats = np.asarray(frustum_feats)
    if frustum_feats.ndim != 4:
        raise ShapeError(f"expected H*W*D*C features, got {frustum_feats.shape}")
    idx = frustum_voxel_indices(frustum_feats.shape[:3], cam, grid).reshape(-1, 3)
    feats = frustum_feats.reshape(-1, frustum_feats.shape[3]).astype(np.float64)
    keep = grid.contains(idx)
    flat = np.ravel_multi_index(tuple(idx[keep].T), grid.dims)
    out = np.zeros((grid.num_voxels, frustum_feats.shape[3]), dtype=np.float64)
    np.add.at(out, flat, feats[keep])
    return out.reshape(grid.dims + (frustum_feats.shape[3],)).astype(np.float32)


def visibility_mask(cloud: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Boolean (X, Y, Z) mask of voxels holding at least one cloud point."""
    mask = np.zeros(grid.dims, dtype=bool)
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if cloud.size:
        idx = grid.quantize(cloud)
        idx = idx[grid.contains(idx)]
        mask[tuple(idx.T)] = True
    return mask


def visibility_split(v: np.ndarray, cloud: np.ndarray, grid: GridSpec):
    """Partition voxel features into visible and invisible parts.

    Returns ``(visible, invisible, mask)`` with ``visible + invisible == v`` exactly.
    """
    v = np.asarray(v)
    if v.shape[:3] != grid.dims:
        raise ShapeError(f"volume {v.shape} does not match grid {grid.dims}")
    mask = visibility_mask(cloud, grid)
    m = mask[..., None]
    return np.where(m, v, 0).astype(v.dtype), np.where(m, 0, v).astype(v.dtype), mask


def upsample_trilinear(t: np.ndarray, factor) -> np.ndarray:
    """Trilinear upsampling of an (X, Y, Z, C) volume with half-pixel alignment.

    Output coordinate ``o`` along an axis samples input coordinate
    ``(o + 0.5) / factor - 0.5``, clamped to the input extent.
    """
    t = np.asarray(t)
    if t.ndim != 4:
        raise ShapeError(f"expected X*Y*Z*C volume, got {t.shape}")
    factors = (factor,) * 3 if np.isscalar(factor) else tuple(factor)
    if len(factors) != 3 or any(int(f) < 1 for f in factors):
        raise ValueError(f"upsample factor must be >= 1 per axis, got {factor}")
    if all(int(f) == 1 for f in factors):
        return t.copy()
    out = t.astype(np.float64)
    # trilinear interpolation is separable: one linear pass per spatial axis
    for axis, f in enumerate(int(f) for f in factors):
        n = out.shape[axis]
        coord = np.clip((np.arange(n * f) + 0.5) / f - 0.5, 0.0, n - 1)
        lo = np.minimum(np.floor(coord).astype(np.int64), max(n - 2, 0))
        hi = np.minimum(lo + 1, n - 1)
        w = (coord - lo).reshape((-1,) + (1,) * (out.ndim - axis - 1))
        out = np.take(out, lo, axis=axis) * (1.0 - w) + np.take(out, hi, axis=axis) * w
    return out.astype(t.dtype if np.issubdtype(t.dtype, np.floating) else np.float32)
