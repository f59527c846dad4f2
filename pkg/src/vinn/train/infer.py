"""Whole-volume inference: per-plane slice prediction, view fusion, hemisphere restore."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data.checkpoint import load_checkpoint
from ..data.labels import DESK_TABLE, LabelTable, LabelView
from ..data.slicing import from_plane, to_plane
from ..data.volume import LabelVolume
from ..eval.aggregate import restore_laterality, view_aggregate
from .trainer import normalize_image, predict_slices

VOXEL_RANGE = (0.5, 2.0)


@dataclass
class PlaneModel:
    spec: object
    params: object
    view: LabelView

    @property
    def plane(self) -> str:
        return self.spec.plane


def load_models(paths) -> dict:
    models = {}
    for p in paths:
        params, spec, meta = load_checkpoint(p)
        ids = tuple(meta.get("label_ids", DESK_TABLE.view(spec.plane).ids))
        models[spec.plane] = PlaneModel(spec, params, LabelView(ids))
    return models


def load_run(run_dir) -> dict:
    paths = sorted(Path(run_dir).glob("*.ckpt"))
    paths = [p for p in paths if not p.name.endswith(".last_good.ckpt")]
    if not paths:
        raise FileNotFoundError(f"no checkpoints in {run_dir}")
    return load_models(paths)


def plane_probabilities(model: PlaneModel, image: np.ndarray, voxel_mm: float, batch: int = 8) -> np.ndarray:
    """(L, D0, D1, D2) class probabilities from slice-wise prediction."""
    slices = normalize_image(to_plane(image, model.plane))
    probs = predict_slices(model.spec, model.params, slices, voxel_mm, batch)  # (S, L, H, W)
    return np.stack([from_plane(c, model.plane) for c in np.moveaxis(probs, 1, 0)])


def segment(models: dict, image: np.ndarray, voxel_mm: float, table: LabelTable = DESK_TABLE,
            weights: dict | None = None) -> np.ndarray:
    """Label ids at the input dims. With fewer than three planes the available
    views are fused with the same weights."""
    lo, hi = VOXEL_RANGE
    if not lo <= voxel_mm <= hi:
        raise ValueError(f"voxel size {voxel_mm} mm outside the supported range [{lo}, {hi}]")
    if not models:
        raise ValueError("no plane models given")
    probs = {p: plane_probabilities(m, image, voxel_mm) for p, m in models.items()}
    lateral = [p for p in ("axial", "coronal") if p in probs]
    if lateral:
        out_view = models[lateral[0]].view
        if any(models[p].view != out_view for p in lateral):
            raise ValueError("axial and coronal models predict different label sets")
        w = dict(weights or {})
        pa = probs.get("axial")
        pc = probs.get("coronal")
        if pa is None:
            pa, w["axial"] = np.zeros_like(pc), 0.0
        if pc is None:
            pc, w["coronal"] = np.zeros_like(pa), 0.0
        if "sagittal" in probs:
            ps, sag_view = probs["sagittal"], models["sagittal"].view
        else:
            sag_view = table.view("sagittal")
            ps, w["sagittal"] = np.zeros((sag_view.num_classes,) + pa.shape[1:]), 0.0
        seg = view_aggregate(pa, pc, ps, table, out_view, sag_view, w)
    else:
        seg = models["sagittal"].view.decode(probs["sagittal"].argmax(axis=0))
    return restore_laterality(seg, table, voxel_mm).seg


def infer(models: dict, image: np.ndarray, voxel_mm: float, table: LabelTable = DESK_TABLE) -> LabelVolume:
    return LabelVolume(segment(models, image, voxel_mm, table).astype(np.int16), voxel_mm)
