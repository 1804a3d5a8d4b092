"""Binary containers (VOXL grids, FTEN tensors), SemanticKITTI label import and weight bundles.

All multi-byte fields are little-endian.

VOXL::

    "VOXL" | u8 version=1 | u32 X | u32 Y | u32 Z | f32 voxel_size | f32[3] origin
    | u16 semantic[X*Y*Z] | u16 instance[X*Y*Z]          (x-major, z fastest)

FTEN::

    "FTEN" | u8 version=1 | u8 rank | u32 extents[rank] | f32 payload (last axis fastest)
"""
from __future__ import annotations

import json
import struct
from importlib import resources
from pathlib import Path

import numpy as np

from .decode import IGNORE_ID, PanopticGrid
from .geometry import GridSpec
from .tensor import as_tensor

VOXL_MAGIC = b"VOXL"
FTEN_MAGIC = b"FTEN"
VERSION = 1
_VOXL_HEAD = struct.Struct("<4sB3I4f")  # 33 bytes
_FTEN_HEAD = struct.Struct("<4sBB")
MAX_VOXELS = 1 << 31


class FormatError(ValueError):
    """Malformed container; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def voxl_size(dims) -> int:
    X, Y, Z = dims
    return _VOXL_HEAD.size + 4 * X * Y * Z


def encode_voxl(grid: PanopticGrid, spec: GridSpec) -> bytes:
    if tuple(grid.shape) != tuple(spec.dims):
        raise ValueError(f"grid shape {grid.shape} does not match spec dims {spec.dims}")
    head = _VOXL_HEAD.pack(VOXL_MAGIC, VERSION, *spec.dims, spec.voxel_size, *spec.origin)
    sem = np.ascontiguousarray(grid.semantic, dtype="<u2").tobytes()
    inst = np.ascontiguousarray(grid.instance, dtype="<u2").tobytes()
    return head + sem + inst


def decode_voxl(data: bytes) -> tuple[PanopticGrid, GridSpec]:
    if len(data) >= 4 and data[:4] != VOXL_MAGIC:
        raise FormatError("bad magic, expected 'VOXL'", 0)
    if len(data) < _VOXL_HEAD.size:
        raise FormatError("truncated header", len(data))
    _, version, X, Y, Z, vs, ox, oy, oz = _VOXL_HEAD.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if min(X, Y, Z) < 1 or X * Y * Z > MAX_VOXELS:
        raise FormatError(f"invalid extents {X}x{Y}x{Z}", 5)
    n = X * Y * Z
    expected = _VOXL_HEAD.size + 4 * n
    if len(data) < expected:
        raise FormatError(f"truncated payload: {len(data)} of {expected} bytes", len(data))
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", expected)
    if not (np.isfinite(vs) and vs > 0):
        raise FormatError(f"invalid voxel size {vs}", 17)
    sem = np.frombuffer(data, dtype="<u2", count=n, offset=_VOXL_HEAD.size).reshape(X, Y, Z)
    inst = np.frombuffer(data, dtype="<u2", count=n, offset=_VOXL_HEAD.size + 2 * n).reshape(X, Y, Z)
    spec = GridSpec((X, Y, Z), float(vs), (float(ox), float(oy), float(oz)))
    return PanopticGrid(sem.astype(np.uint16), inst.astype(np.uint16)), spec


def write_voxl(path, grid: PanopticGrid, spec: GridSpec) -> None:
    Path(path).write_bytes(encode_voxl(grid, spec))


def read_voxl(path) -> tuple[PanopticGrid, GridSpec]:
    return decode_voxl(Path(path).read_bytes())


def encode_ften(t: np.ndarray) -> bytes:
    arr = as_tensor(t)
    if arr.ndim > 255:
        raise ValueError("rank above 255 cannot be encoded")
    head = _FTEN_HEAD.pack(FTEN_MAGIC, VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


def decode_ften(data: bytes) -> np.ndarray:
    if len(data) >= 4 and data[:4] != FTEN_MAGIC:
        raise FormatError("bad magic, expected 'FTEN'", 0)
    if len(data) < _FTEN_HEAD.size:
        raise FormatError("truncated header", len(data))
    _, version, rank = _FTEN_HEAD.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if rank < 1:
        raise FormatError("rank must be >= 1", 5)
    ext_end = _FTEN_HEAD.size + 4 * rank
    if len(data) < ext_end:
        raise FormatError("truncated extents", len(data))
    extents = struct.unpack_from(f"<{rank}I", data, _FTEN_HEAD.size)
    if min(extents) < 1:
        raise FormatError(f"zero extent in {extents}", _FTEN_HEAD.size)
    n = int(np.prod(extents, dtype=object))
    if n > MAX_VOXELS * 4:
        raise FormatError(f"extents {extents} overflow", _FTEN_HEAD.size)
    expected = ext_end + 4 * n
    if len(data) < expected:
        raise FormatError(f"truncated payload: {len(data)} of {expected} bytes", len(data))
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", expected)
    arr = np.frombuffer(data, dtype="<f4", count=n, offset=ext_end).reshape(extents)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise FormatError("NaN or Inf in payload", ext_end + 4 * int(bad[0]))
    return as_tensor(arr)


def write_ften(path, t: np.ndarray) -> None:
    Path(path).write_bytes(encode_ften(t))


def read_ften(path) -> np.ndarray:
    return decode_ften(Path(path).read_bytes())


def load_weight_bundle(manifest_path) -> dict[str, np.ndarray]:
    """Load ``{"params": {name: "file.ften", ...}}``; file paths are relative to the manifest."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    return {name: read_ften(manifest_path.parent / rel) for name, rel in doc["params"].items()}


def save_weight_bundle(manifest_path, params: dict[str, np.ndarray]) -> None:
    manifest_path = Path(manifest_path)
    entries = {}
    for name, arr in params.items():
        rel = f"{name}.ften"
        write_ften(manifest_path.parent / rel, arr)
        entries[name] = rel
    manifest_path.write_text(json.dumps({"params": entries}, indent=2, sort_keys=True) + "\n")


def default_remap() -> dict[int, int]:
    text = resources.files("panoscene").joinpath("data/semantickitti_remap.json").read_text()
    return {int(k): int(v) for k, v in json.loads(text)["learning_map"].items()}


def remap_table(remap: dict[int, int] | None = None, unknown: int = IGNORE_ID) -> np.ndarray:
    table = np.full(1 << 16, unknown, dtype=np.uint16)
    for raw, train in (default_remap() if remap is None else remap).items():
        table[int(raw)] = int(train)
    return table


def import_semantickitti_labels(path, dims=(256, 256, 32), remap: dict[int, int] | None = None) -> PanopticGrid:
    """Read a raw u16 voxel label file and map its IDs onto the 0..19 / 255 taxonomy.

    Raw IDs missing from the remap table become the ignore label.
    """
    raw = np.fromfile(path, dtype="<u2")
    expected = int(np.prod(dims))
    if raw.size != expected or Path(path).stat().st_size != 2 * expected:
        raise ValueError(f"expected {expected} u16 labels ({2 * expected} bytes), "
                         f"found {Path(path).stat().st_size} bytes")
    return PanopticGrid.semantic_only(remap_table(remap)[raw].reshape(dims))
