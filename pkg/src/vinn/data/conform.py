"""Conform step: canonical RAS axis order and robust 0..255 intensity scaling."""
from __future__ import annotations

import numpy as np

from .volume import IntensityVolume

Q_LOW, Q_HIGH = 0.001, 0.999
_OPPOSITE = {"R": "L", "L": "R", "A": "P", "P": "A", "S": "I", "I": "S"}


def reorient(data: np.ndarray, orientation: str, target: str = "RAS") -> np.ndarray:
    """Permute / flip axes so that axis k points towards ``target[k]``."""
    orientation = orientation.upper()
    if sorted(orientation.translate(str.maketrans("LPI", "RAS"))) != ["A", "R", "S"]:
        raise ValueError(f"invalid orientation code {orientation!r}")
    perm, flips = [], []
    for t in target:
        for k, o in enumerate(orientation):
            if o in (t, _OPPOSITE[t]):
                perm.append(k)
                flips.append(o != t)
    out = np.transpose(data, perm)
    for axis, f in enumerate(flips):
        if f:
            out = np.flip(out, axis)
    return np.ascontiguousarray(out)


def robust_scale(values: np.ndarray) -> np.ndarray:
    """Clip at the [0.1%, 99.9%] quantiles, map affinely to 0..255, round.

    The quantiles are taken as actual sample values (lower / higher), which
    makes the mapping idempotent on already-conformed data.
    """
    v = np.asarray(values, dtype=np.float64)
    lo = np.quantile(v, Q_LOW, method="lower")
    hi = np.quantile(v, Q_HIGH, method="higher")
    if hi <= lo:
        return np.full(v.shape, 128, dtype=np.uint8)
    scaled = (np.clip(v, lo, hi) - lo) * (255.0 / (hi - lo))
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def conform(vol: IntensityVolume) -> IntensityVolume:
    if not vol.is_isotropic:
        raise ValueError(f"conform needs an isotropic volume, got voxel size {vol.voxel_mm}")
    data = reorient(vol.data, vol.orientation)
    return IntensityVolume(robust_scale(data), vol.voxel_mm, "RAS")
