"""Cut volumes into per-plane 2-D slice stacks and stack them back.

Volumes are RAS ordered: axis 0 runs left->right, axis 1 posterior->anterior,
axis 2 inferior->superior. A slice of plane P fixes the axis in ``PLANE_AXIS``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import DESK_TABLE, LabelTable

PLANE_AXIS = {"sagittal": 0, "coronal": 1, "axial": 2}


@dataclass
class SliceSet:
    plane: str
    images: np.ndarray    # (S, H, W)
    labels: np.ndarray    # (S, H, W) label ids
    indices: np.ndarray   # (S,) position along the fixed axis
    voxel_mm: float
    depth: int            # volume size along the fixed axis

    def __len__(self) -> int:
        return len(self.indices)


def to_plane(volume: np.ndarray, plane: str) -> np.ndarray:
    """(D0, D1, D2) -> (S, H, W) with the plane's fixed axis first."""
    return np.moveaxis(np.asarray(volume), PLANE_AXIS[plane], 0)


def from_plane(stack: np.ndarray, plane: str) -> np.ndarray:
    return np.moveaxis(np.asarray(stack), 0, PLANE_AXIS[plane])


def slice_plane(image: np.ndarray, labels: np.ndarray, voxel_mm: float, plane: str,
                table: LabelTable = DESK_TABLE, keep_empty: bool = False) -> SliceSet:
    if image.shape != labels.shape:
        raise ValueError(f"image {image.shape} and labels {labels.shape} differ")
    img = to_plane(image, plane)
    lab = to_plane(labels, plane)
    if plane == "sagittal":
        lab = table.to_merged(lab)
    keep = np.arange(len(lab)) if keep_empty else np.flatnonzero(lab.reshape(len(lab), -1).any(axis=1))
    return SliceSet(plane, np.ascontiguousarray(img[keep]), np.ascontiguousarray(lab[keep]),
                    keep, float(voxel_mm), img.shape[0])


def slice_planes(image: np.ndarray, labels: np.ndarray, voxel_mm: float,
                 table: LabelTable = DESK_TABLE, planes=tuple(PLANE_AXIS)) -> dict:
    return {p: slice_plane(image, labels, voxel_mm, p, table) for p in planes}


def restack(slices: np.ndarray, indices: np.ndarray, depth: int, plane: str, fill=0) -> np.ndarray:
    """Inverse of slicing; removed (empty) positions are filled with ``fill``."""
    slices = np.asarray(slices)
    out = np.full((depth,) + slices.shape[1:], fill, dtype=slices.dtype)
    out[np.asarray(indices)] = slices
    return from_plane(out, plane)
