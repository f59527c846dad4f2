"""Overlap (Dice) and surface distance (average symmetric surface distance)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class EvalRecord:
    subject: str
    model: str
    structure: int
    dsc: float
    asd: float  # NaN when undefined
    flags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.dsc <= 100.0:
            raise ValueError(f"dsc {self.dsc} outside [0, 100]")
        if not (math.isnan(self.asd) or self.asd >= 0):
            raise ValueError(f"asd {self.asd} must be >= 0")


def _check_pair(y, p):
    y, p = np.asarray(y, dtype=bool), np.asarray(p, dtype=bool)
    if y.shape != p.shape:
        raise ValueError(f"ground truth {y.shape} and prediction {p.shape} dims differ")
    return y, p


def dsc(y, p) -> float:
    """Dice similarity in percent; both empty -> 100, one empty -> 0."""
    y, p = _check_pair(y, p)
    total = int(y.sum()) + int(p.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2.0 * int((y & p).sum()) / total


def boundary(mask) -> np.ndarray:
    """Foreground voxels with at least one face neighbour in the background.

    Positions outside the array count as background.
    """
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1)
    interior = np.ones_like(m)
    core = tuple(slice(1, -1) for _ in range(m.ndim))
    for ax in range(m.ndim):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=ax)[core]
    return m & ~interior


def _sampling(voxel_mm, ndim):
    v = np.broadcast_to(np.asarray(voxel_mm, dtype=np.float64), (ndim,))
    return tuple(float(x) for x in v)


def surface_distances(src, dst, voxel_mm=1.0) -> np.ndarray:
    """For each boundary voxel of ``src`` the distance (mm) to the nearest
    boundary voxel of ``dst`` (centre to centre)."""
    bs, bd = boundary(src), boundary(dst)
    if not bs.any() or not bd.any():
        raise ValueError("surface distance is undefined for an empty structure")
    dt = ndimage.distance_transform_edt(~bd, sampling=_sampling(voxel_mm, bs.ndim))
    return dt[bs]


def asd(y, p, voxel_mm=1.0) -> float:
    """Average symmetric surface distance in mm; NaN if either set is empty."""
    y, p = _check_pair(y, p)
    if not y.any() or not p.any():
        return float("nan")
    a = surface_distances(y, p, voxel_mm)
    b = surface_distances(p, y, voxel_mm)
    return float((a.sum() + b.sum()) / (a.size + b.size))


def evaluate_segmentation(gt, pred, voxel_mm, structures, subject="", model="") -> list:
    """One record per structure id."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"ground truth {gt.shape} and prediction {pred.shape} dims differ")
    out = []
    for s in structures:
        y, p = gt == s, pred == s
        d = asd(y, p, voxel_mm)
        flags = ()
        if math.isnan(d):
            flags = ("asd_undefined",) + (("absent_gt",) if not y.any() else ()) + \
                (("absent_pred",) if not p.any() else ())
        out.append(EvalRecord(subject, model, int(s), dsc(y, p), d, flags))
    return out
