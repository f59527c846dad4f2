"""Three-view probability fusion and hemisphere restoration of merged labels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..data.labels import DESK_TABLE, LabelTable, LabelView

VIEW_WEIGHTS = {"axial": 1.0, "coronal": 1.0, "sagittal": 0.5}


def broadcast_sagittal(p_sag: np.ndarray, sag_view: LabelView, out_view: LabelView,
                       table: LabelTable = DESK_TABLE) -> np.ndarray:
    """Copy each merged-class probability to every lateralized child class."""
    src = {lid: k for k, lid in enumerate(sag_view.ids)}
    idx = []
    for lid in out_view.ids:
        m = table.entries[lid].merged_id
        if m not in src:
            raise ValueError(f"label {lid} (merged {m}) has no sagittal class")
        idx.append(src[m])
    return np.asarray(p_sag)[idx]


def view_aggregate(p_axial, p_coronal, p_sagittal, table: LabelTable = DESK_TABLE,
                   out_view: LabelView | None = None, sag_view: LabelView | None = None,
                   weights: dict | None = None) -> np.ndarray:
    """Weighted vote of per-view class probabilities (L, D0, D1, D2) -> label ids.

    Axial and coronal probabilities live in ``out_view`` class space, sagittal
    in the merged view. Ties go to the lowest class index.
    """
    out_view = out_view or table.view("coronal")
    sag_view = sag_view or table.view("sagittal")
    w = dict(VIEW_WEIGHTS, **(weights or {}))
    p_axial, p_coronal, p_sagittal = (np.asarray(x, dtype=np.float64) for x in (p_axial, p_coronal, p_sagittal))
    if p_axial.shape != p_coronal.shape or p_axial.shape[0] != out_view.num_classes:
        raise ValueError(f"axial {p_axial.shape} / coronal {p_coronal.shape} do not match "
                         f"{out_view.num_classes} classes")
    if p_sagittal.shape != (sag_view.num_classes,) + p_axial.shape[1:]:
        raise ValueError(f"sagittal {p_sagittal.shape} does not match {sag_view.num_classes} classes "
                         f"over {p_axial.shape[1:]}")
    score = w["axial"] * p_axial + w["coronal"] * p_coronal
    if w["sagittal"]:
        score = score + w["sagittal"] * broadcast_sagittal(p_sagittal, sag_view, out_view, table)
    return out_view.decode(np.argmax(score, axis=0))


@dataclass
class LateralityResult:
    seg: np.ndarray
    assigned: int = 0
    unresolved: list = field(default_factory=list)  # (merged id, component size) left merged


def restore_laterality(seg, table: LabelTable = DESK_TABLE, voxel_mm=1.0) -> LateralityResult:
    """Give each connected component of a merged class the hemisphere whose WM
    centroid (mm) is nearer; equidistant components go left."""
    seg = np.array(seg, copy=True)
    scale = np.broadcast_to(np.asarray(voxel_mm, dtype=np.float64), (seg.ndim,))
    cents = {}
    for hemi in ("left", "right"):
        pts = np.argwhere(seg == table.wm_id(hemi))
        if len(pts):
            cents[hemi] = pts.mean(axis=0) * scale
    res = LateralityResult(seg)
    for m in table.merged_ids:
        comp, n = ndimage.label(seg == m)
        if n == 0:
            continue
        for k in range(1, n + 1):
            sel = comp == k
            if len(cents) < 2:
                res.unresolved.append((m, int(sel.sum())))
                continue
            c = np.argwhere(sel).mean(axis=0) * scale
            dl = np.linalg.norm(c - cents["left"])
            dr = np.linalg.norm(c - cents["right"])
            seg[sel] = table.lateral_child(m, "left" if dl <= dr else "right")
            res.assigned += 1
    return res
