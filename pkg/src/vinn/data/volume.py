"""3-D isotropic voxel grids and the headered raw ``VVOL`` file format.

Layout: magic ``VVOL``, u32 version, 3 x u32 dims, f64 voxel size (mm),
u8 dtype code, 3-byte orientation code (e.g. ``RAS``), then the voxels
in C order, little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VVOL_MAGIC = b"VVOL"
VVOL_VERSION = 1
_HEADER = struct.Struct("<4sI3IdB3s")
DTYPE_CODES = {1: "u1", 2: "i2", 3: "u2", 4: "i4", 5: "f4", 6: "f8"}
_CODE_OF = {np.dtype(v).str[1:]: k for k, v in DTYPE_CODES.items()}


class VolumeFormatError(ValueError):
    pass


@dataclass
class _Volume:
    data: np.ndarray
    voxel_mm: float
    orientation: str = "RAS"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume must be 3-D, got shape {self.data.shape}")
        sizes = np.atleast_1d(np.asarray(self.voxel_mm, dtype=np.float64))
        if sizes.size not in (1, 3) or not (sizes > 0).all():
            raise ValueError(f"voxel size must be > 0, got {self.voxel_mm}")
        self.voxel_mm = float(sizes[0]) if sizes.size == 1 or np.all(sizes == sizes[0]) else tuple(sizes.tolist())

    @property
    def is_isotropic(self) -> bool:
        return not isinstance(self.voxel_mm, tuple)

    @property
    def dims(self) -> tuple:
        return self.data.shape


class IntensityVolume(_Volume):
    pass


class LabelVolume(_Volume):
    def volume_mm3(self, label_id) -> float:
        ids = np.atleast_1d(label_id)
        return float(np.isin(self.data, ids).sum()) * self.voxel_mm ** 3


def save_volume(vol: _Volume, path) -> None:
    if not vol.is_isotropic:
        raise VolumeFormatError(f"VVOL stores isotropic volumes only, got voxel size {vol.voxel_mm}")
    data = np.asarray(vol.data)
    key = data.dtype.newbyteorder("<").str[1:]
    if key not in _CODE_OF:
        raise VolumeFormatError(f"unsupported dtype {data.dtype}")
    orient = vol.orientation.encode("ascii")
    if len(orient) != 3:
        raise VolumeFormatError(f"orientation code must have 3 letters, got {vol.orientation!r}")
    head = _HEADER.pack(VVOL_MAGIC, VVOL_VERSION, *data.shape, float(vol.voxel_mm), _CODE_OF[key], orient)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes())


def load_volume(path, kind=None) -> _Volume:
    """Read a VVOL file; integer data loads as a LabelVolume unless ``kind`` says otherwise."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    magic, version, d0, d1, d2, voxel, code, orient = _HEADER.unpack_from(raw)
    if magic != VVOL_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if version != VVOL_VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    if code not in DTYPE_CODES:
        raise VolumeFormatError(f"{path}: unknown dtype code {code}")
    dtype = np.dtype("<" + DTYPE_CODES[code])
    n = d0 * d1 * d2
    if len(raw) - _HEADER.size != n * dtype.itemsize:
        raise VolumeFormatError(f"{path}: expected {n * dtype.itemsize} data bytes, "
                                f"found {len(raw) - _HEADER.size}")
    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(d0, d1, d2).astype(dtype.newbyteorder("="))
    if kind is None:
        kind = LabelVolume if np.issubdtype(dtype, np.integer) and code != 1 else IntensityVolume
    return kind(data, voxel, orient.decode("ascii"))
