"""Per-plane training of the slice networks."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import autograd as ag
from ..augment import exsa_apply, exsa_sample, fit_canvas, insa_sample
from ..blocks import Context, Params
from ..data.checkpoint import save_checkpoint
from ..data.labels import DESK_TABLE, LabelTable, LabelView
from ..data.slicing import slice_plane
from ..loss import composite_loss, mask_radius, median_freq_weights, one_hot, weight_map
from ..model import NetworkSpec, build, forward
from .config import TrainConfig
from .optim import AdamW, NonFiniteGradient, lr_at

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


def plane_view(table: LabelTable, plane: str, merge_cortex: bool) -> LabelView:
    return table.view(plane, merge_cortex)


def plane_labels(labels: np.ndarray, table: LabelTable, view: LabelView) -> np.ndarray:
    """Map label ids into the id space of ``view`` (merging where the view asks)."""
    ids = set(view.ids)
    merged = [m for m in table.merged_ids if m in ids]
    return table.to_merged(labels, only=merged) if merged else labels


def normalize_image(image: np.ndarray) -> np.ndarray:
    return (np.asarray(image, dtype=np.float32) / 255.0).astype(ag.get_dtype(), copy=False)


@dataclass
class Bucket:
    """All training slices of one plane sharing a voxel size (and so dims)."""
    voxel_mm: float
    images: np.ndarray     # (S, H, W) float
    classes: np.ndarray    # (S, H, W) class indices
    omega: np.ndarray | None = None


@dataclass
class PlaneData:
    plane: str
    view: LabelView
    buckets: list
    class_weights: np.ndarray
    gm_classes: tuple
    brain_classes: tuple

    @property
    def num_slices(self) -> int:
        return sum(len(b.images) for b in self.buckets)


def tissue_classes(table: LabelTable, view: LabelView):
    tissue = {i: table.entries[i].tissue for i in view.ids}
    gm = tuple(k for k, i in enumerate(view.ids) if tissue[i] == "gm")
    brain = tuple(k for k, i in enumerate(view.ids) if tissue[i] not in ("bg", "csf"))
    return gm, brain


def prepare_plane(samples, plane: str, cfg: TrainConfig, table: LabelTable = DESK_TABLE) -> PlaneData:
    if not samples:
        raise ValueError(f"no training volumes for plane {plane}")
    view = plane_view(table, plane, cfg.merge_cortex)
    groups = {}
    for s in samples:
        ss = slice_plane(s.image, s.labels, s.voxel_mm, plane, table)
        lab = view.encode(plane_labels(ss.labels, table, view))
        groups.setdefault((float(s.voxel_mm), ss.images.shape[1:]), []).append((normalize_image(ss.images), lab))
    buckets = [Bucket(v, np.concatenate([g[0] for g in grp]), np.concatenate([g[1] for g in grp]))
               for (v, _), grp in sorted(groups.items(), key=lambda kv: kv[0][0])]
    if not any(len(b.images) for b in buckets):
        raise ValueError(f"plane {plane}: every slice is empty")
    all_classes = np.concatenate([b.classes.ravel() for b in buckets])
    cw = median_freq_weights(all_classes, view.num_classes)
    gm, brain = tissue_classes(table, view)
    data = PlaneData(plane, view, buckets, cw, gm, brain)
    if not cfg.augment.exsa.enabled:
        for b in buckets:
            b.omega = np.stack([_omega(lab, b.voxel_mm, data, cfg) for lab in b.classes])
    return data


def _omega(classes: np.ndarray, voxel_mm: float, data: PlaneData, cfg: TrainConfig) -> np.ndarray:
    wm = weight_map(classes, data.class_weights, data.gm_classes, data.brain_classes,
                    radius=mask_radius(voxel_mm, cfg.loss.radius_mm), hires=cfg.loss.hires,
                    w_hires=cfg.loss.w_hires)
    return wm.total


def epoch_batches(data: PlaneData, cfg: TrainConfig, rng: np.random.Generator) -> list:
    """(bucket index, slice indices) pairs; a batch never mixes voxel sizes."""
    batches = []
    for bi, b in enumerate(data.buckets):
        n = len(b.images)
        idx = rng.permutation(n)
        if cfg.slice_stride > 1:
            idx = idx[:math.ceil(n / cfg.slice_stride)]
        batches += [(bi, idx[i:i + cfg.batch]) for i in range(0, len(idx), cfg.batch)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def make_batch(data: PlaneData, bi: int, idx: np.ndarray, cfg: TrainConfig, spec: NetworkSpec,
               rng: np.random.Generator):
    """Images (N,1,H,W), class indices, pixel weights and the native voxel size the
    network should be told."""
    b = data.buckets[bi]
    images, classes = b.images[idx], b.classes[idx]
    res = b.voxel_mm
    s = exsa_sample(cfg.augment.exsa, rng)
    if cfg.augment.exsa.enabled:
        shape = images.shape[1:]
        out_i, out_c = [], []
        for im, lab in zip(images, classes):
            ri, rl = exsa_apply(im, lab, s, cfg.augment.exsa)
            out_i.append(fit_canvas(ri, shape, 0))
            out_c.append(fit_canvas(rl, shape, 0))
        images, classes = np.stack(out_i), np.stack(out_c)
        res = b.voxel_mm / s
        omega = np.stack([_omega(c, res, data, cfg) for c in classes])
    else:
        omega = b.omega[idx]
    return images[:, None].astype(ag.get_dtype(), copy=False), classes, omega, res


def slice_dsc(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class Dice (percent) pooled over all given slices; NaN where absent in both."""
    out = np.full(num_classes, np.nan)
    for k in range(num_classes):
        p, t = pred == k, truth == k
        tot = p.sum() + t.sum()
        if tot:
            out[k] = 200.0 * (p & t).sum() / tot
    return out


def predict_slices(spec: NetworkSpec, params: Params, images: np.ndarray, voxel_mm: float,
                   batch: int = 8) -> np.ndarray:
    """Class probabilities (S, L, H, W) for a stack of normalized slices."""
    ctx = Context(training=False)
    out = []
    with ag.no_grad():
        for i in range(0, len(images), batch):
            x = images[i:i + batch, None].astype(ag.get_dtype(), copy=False)
            out.append(forward(spec, params, ag.Tensor(x), res_native=voxel_mm, ctx=ctx).data)
    return np.concatenate(out) if out else np.zeros((0, spec.num_classes) + images.shape[1:])


def validate_plane(spec, params, val: PlaneData | None) -> float:
    if val is None:
        return float("nan")
    scores = []
    for b in val.buckets:
        if len(b.images):
            pred = predict_slices(spec, params, b.images, b.voxel_mm).argmax(axis=1)
            scores.append(slice_dsc(pred, b.classes, spec.num_classes)[1:])
    return float(np.nanmean(np.concatenate(scores))) if scores else float("nan")


def _snapshot(params: Params) -> dict:
    return {"w": {k: v.data.copy() for k, v in params.weights.items()},
            "b": {k: v.copy() for k, v in params.buffers.items()}}


def _restore(params: Params, snap: dict) -> None:
    for k, v in snap["w"].items():
        params.weights[k].data = v
    for k, v in snap["b"].items():
        params.buffers[k][...] = v


@dataclass
class PlaneResult:
    plane: str
    spec: NetworkSpec
    params: Params
    view: LabelView
    history: list = field(default_factory=list)
    seconds: float = 0.0


def train_plane(samples, plane: str, cfg: TrainConfig, val_samples=(), table: LabelTable = DESK_TABLE,
                out_dir=None, on_step=None) -> PlaneResult:
    t_start = time.perf_counter()
    data = prepare_plane(samples, plane, cfg, table)
    val = prepare_plane(val_samples, plane, replace(cfg, augment=type(cfg.augment)()), table) if val_samples else None
    spec = replace(cfg.network, plane=plane, num_classes=data.view.num_classes)
    plane_seed = cfg.seed * 1000 + ("axial", "coronal", "sagittal").index(plane)
    params = build(spec, seed=plane_seed)
    rng = np.random.default_rng(plane_seed)
    opt = AdamW(params.weights, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    ctx = Context(training=True)
    history = []
    good = _snapshot(params)
    for epoch in range(cfg.epochs):
        batches = epoch_batches(data, cfg, rng)
        sums = np.zeros(3)
        for step, (bi, idx) in enumerate(batches):
            lr = lr_at(epoch + step / len(batches), cfg.lr, cfg.restart_t0, cfg.restart_mult, cfg.lr_min)
            x, y, omega, res = make_batch(data, bi, idx, cfg, spec, rng)
            alpha = insa_sample(cfg.augment.insa, rng) if spec.arch == "vinn" else 0.0
            try:
                p = forward(spec, params, ag.Tensor(x), res_native=res, alpha=alpha, ctx=ctx)
                loss = composite_loss(p, one_hot(y, spec.num_classes), omega, cfg.loss.reduction)
                if not math.isfinite(float(loss.total.data)):
                    raise ag.NonFiniteError("loss is not finite")
                params.zero_grad()
                loss.total.backward()
                opt.step(lr)
            except (ag.NonFiniteError, NonFiniteGradient) as exc:
                _restore(params, good)
                path = None
                if out_dir is not None:
                    path = Path(out_dir) / f"{plane}.last_good.ckpt"
                    save_checkpoint(params, spec, path, {"plane": plane, "epoch": epoch, "diverged": True})
                raise TrainingDiverged(f"{plane} epoch {epoch} step {step}: {exc}", path) from exc
            sums += (float(loss.total.data), loss.logistic, loss.dice)
            if on_step is not None:
                on_step(plane, epoch, step, float(loss.total.data))
        good = _snapshot(params)
        mean = sums / max(1, len(batches))
        do_val = (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1
        vd = validate_plane(spec, params, val) if do_val else float("nan")
        row = {"plane": plane, "epoch": epoch + 1, "lr_end": lr, "steps": len(batches), "loss": mean[0],
               "logistic": mean[1], "dice": mean[2], "val_dsc": vd}
        history.append(row)
        log.info("%s epoch %d loss %.5f val_dsc %.2f", plane, epoch + 1, mean[0], vd)
    return PlaneResult(plane, spec, params, data.view, history, time.perf_counter() - t_start)


LOG_FIELDS = ("plane", "epoch", "lr_end", "steps", "loss", "logistic", "dice", "val_dsc")


def train(cfg: TrainConfig, samples, val_samples=(), out_dir=None, table: LabelTable = DESK_TABLE,
          on_step=None) -> dict:
    """Train one model per configured plane; writes ``{plane}.ckpt``, ``train_log.csv``
    and ``run.json`` into ``out_dir`` when given. ``on_step(plane, epoch, step, loss)``
    is called after every optimiser step."""
    if not samples:
        raise ValueError("training split is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = {}
    for plane in cfg.planes:
        res = train_plane(samples, plane, cfg, val_samples, table, out, on_step)
        results[plane] = res
        if out is not None:
            meta = {"plane": plane, "label_ids": list(res.view.ids), "epochs": cfg.epochs, "seed": cfg.seed}
            save_checkpoint(res.params, res.spec, out / f"{plane}.ckpt", meta)
    if out is not None:
        with open(out / "train_log.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, LOG_FIELDS)
            w.writeheader()
            for r in results.values():
                w.writerows(r.history)
        summary = {"config": cfg.to_dict(), "planes": {
            p: {"checkpoint": f"{p}.ckpt", "seconds": r.seconds, "final": r.history[-1]} for p, r in results.items()}}
        (out / "run.json").write_text(json.dumps(summary, indent=2, default=str))
    return results
