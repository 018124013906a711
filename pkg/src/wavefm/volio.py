"""Volume containers, file readers/writers and intensity preprocessing.

Two on-disk formats are understood:

* a read-only subset of single-file NIfTI-1 (``n+1``), little-endian,
  uncompressed, 3D, integer or float voxels;
* ``FLV1``, the package's raw format: ``b"FLV1" | u32 D | u32 H | u32 W``
  followed by ``D*H*W`` little-endian float32 values in depth-major order.

Axis convention for NIfTI: ``dim[1]`` (fastest on disk) is width,
``dim[2]`` height and ``dim[3]`` depth, so a file reshapes directly to a
C-ordered ``(depth, height, width)`` array.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadDims, DegenerateRange, MalformedHeader, TruncatedData,
                     UnsupportedDatatype)

PROVENANCES = ("nifti", "rawvol", "synthetic", "generated")

RAW_MAGIC = b"FLV1"
_RAW_HEADER = struct.Struct("<4sIII")

NIFTI_HEADER_SIZE = 348
_NIFTI_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
}


@dataclass
class Volume3D:
    """Dense ``(depth, height, width)`` float32 scalar field."""

    data: np.ndarray
    provenance: str = "synthetic"

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise BadDims(f"volume must be 3D with positive dims, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.data = data

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)


@dataclass
class PreprocessConfig:
    clip_lo_pct: float = 0.5
    clip_hi_pct: float = 99.5
    out_range: tuple[float, float] = (-1.0, 1.0)
    pad_to: tuple[int, int, int] | None = None
    pad_mode: str = "replicate"

    def __post_init__(self):
        if not (0.0 <= self.clip_lo_pct < self.clip_hi_pct <= 100.0):
            raise ValueError("need 0 <= clip_lo_pct < clip_hi_pct <= 100")
        if self.out_range[0] >= self.out_range[1]:
            raise ValueError("out_range must be increasing")
        if self.pad_mode != "replicate":
            raise ValueError(f"unsupported pad_mode {self.pad_mode!r}")
        if self.pad_to is not None:
            self.pad_to = tuple(int(d) for d in self.pad_to)
            if len(self.pad_to) != 3 or any(d % 2 for d in self.pad_to):
                raise BadDims(f"pad_to must be three even sizes, got {self.pad_to}")


# ---------------------------------------------------------------- NIfTI-1

def load_nifti(path) -> Volume3D:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raise UnsupportedDatatype(f"{path}: compressed NIfTI is not supported")
    if len(raw) < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == NIFTI_HEADER_SIZE:
            raise MalformedHeader(f"{path}: big-endian NIfTI is not supported")
        raise MalformedHeader(f"{path}: sizeof_hdr is {sizeof_hdr}, expected 348")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise MalformedHeader(f"{path}: magic {magic!r} is not single-file NIfTI-1")

    dim = struct.unpack_from("<8h", raw, 40)
    if dim[0] != 3:
        raise MalformedHeader(f"{path}: dim[0] is {dim[0]}, only 3D volumes are supported")
    width, height, depth = dim[1], dim[2], dim[3]
    if min(width, height, depth) < 1:
        raise MalformedHeader(f"{path}: non-positive dimension in {dim[1:4]}")

    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype}")
    dtype = _NIFTI_DTYPES[datatype]

    vox_offset, scl_slope, scl_inter = struct.unpack_from("<3f", raw, 108)
    offset = int(vox_offset) if vox_offset >= NIFTI_HEADER_SIZE else 352
    count = depth * height * width
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise TruncatedData(f"{path}: payload holds {max(0, len(raw) - offset)} bytes, "
                            f"dims need {count * dtype.itemsize}")
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    if scl_slope != 0.0 and np.isfinite(scl_slope):
        values = values.astype(np.float64) * scl_slope + scl_inter
    data = values.astype(np.float32).reshape(depth, height, width)
    if not np.all(np.isfinite(data)):
        raise MalformedHeader(f"{path}: non-finite voxel values")
    return Volume3D(data, provenance="nifti")


# ---------------------------------------------------------------- FLV1

def save_rawvol(vol: Volume3D, path) -> None:
    d, h, w = vol.dims
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(RAW_MAGIC, d, h, w))
        fh.write(vol.data.astype("<f4", copy=False).tobytes(order="C"))


def load_rawvol(path, provenance: str = "rawvol") -> Volume3D:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _RAW_HEADER.size:
        raise MalformedHeader(f"{path}: shorter than the FLV1 header")
    magic, d, h, w = _RAW_HEADER.unpack_from(raw, 0)
    if magic != RAW_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if min(d, h, w) == 0:
        raise MalformedHeader(f"{path}: zero dimension in ({d}, {h}, {w})")
    count = d * h * w
    if len(raw) - _RAW_HEADER.size < 4 * count:
        raise TruncatedData(f"{path}: payload has {len(raw) - _RAW_HEADER.size} bytes, "
                            f"expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_RAW_HEADER.size)
    return Volume3D(data.reshape(d, h, w), provenance=provenance)


# ---------------------------------------------------------------- preprocessing

def pad_split(total: int) -> tuple[int, int]:
    """Before/after split of ``total`` padding voxels: (floor, ceil) of half."""
    return total // 2, total - total // 2


def replicate_pad(data: np.ndarray, target) -> np.ndarray:
    widths = []
    for size, want in zip(data.shape, target):
        if want < size:
            raise BadDims(f"pad target {tuple(target)} smaller than input {data.shape}")
        widths.append(pad_split(want - size))
    return np.pad(data, widths, mode="edge")


def preprocess(vol: Volume3D, cfg: PreprocessConfig, on_degenerate: str = "midpoint") -> Volume3D:
    """Percentile clip, affine rescale to ``cfg.out_range``, replication pad.

    A constant volume has no usable range; with ``on_degenerate="midpoint"``
    every voxel is set to the centre of ``out_range``, with ``"raise"`` a
    :class:`DegenerateRange` is thrown instead.
    """
    data = vol.data.astype(np.float64)
    lo_v, hi_v = np.percentile(data, [cfg.clip_lo_pct, cfg.clip_hi_pct], method="linear")
    out_lo, out_hi = cfg.out_range
    if hi_v <= lo_v:
        if on_degenerate == "raise":
            raise DegenerateRange(f"percentile range collapsed at {lo_v}")
        scaled = np.full_like(data, 0.5 * (out_lo + out_hi))
    else:
        scaled = out_lo + (np.clip(data, lo_v, hi_v) - lo_v) * ((out_hi - out_lo) / (hi_v - lo_v))
        scaled = np.clip(scaled, out_lo, out_hi)
    if cfg.pad_to is not None:
        scaled = replicate_pad(scaled, cfg.pad_to)
    return Volume3D(scaled.astype(np.float32), provenance=vol.provenance)
