"""Phantom datasets on disk: conformed VVOL volumes plus a manifest."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conform import conform
from .manifest import ManifestRecord, read_manifest, write_manifest
from .phantom import PhantomSpec, render_phantom
from .volume import IntensityVolume, LabelVolume, load_volume, save_volume


@dataclass
class Sample:
    """One conformed volume with ground truth."""
    name: str
    image: np.ndarray      # uint8 after conform
    labels: np.ndarray     # lateralized label ids
    voxel_mm: float


def make_sample(seed: int, voxel_mm: float, spec: PhantomSpec | None = None) -> Sample:
    spec = spec or PhantomSpec()
    spec = type(spec)(**{**spec.to_dict(), "seed": seed})
    img, lab = render_phantom(spec, voxel_mm)
    return Sample(f"phantom_s{seed}_v{voxel_mm:g}", conform(img).data, lab.data, float(voxel_mm))


def generate_dataset(out_dir, seeds, voxel_sizes, split: str = "train", spec: PhantomSpec | None = None,
                     append: bool = True) -> list:
    """Render, conform and save every (seed, voxel size) pair; returns the new records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for v in voxel_sizes:
        for seed in seeds:
            s = make_sample(seed, v, spec)
            save_volume(IntensityVolume(s.image, s.voxel_mm), out / f"{s.name}.img.vvol")
            save_volume(LabelVolume(s.labels.astype(np.int16), s.voxel_mm), out / f"{s.name}.lab.vvol")
            records.append(ManifestRecord(f"{s.name}.img.vvol", f"{s.name}.lab.vvol", s.voxel_mm, split, seed))
    manifest = out / "manifest.jsonl"
    old = []
    if append and manifest.exists():
        keep = {(r.image, r.labels) for r in records}
        old = [r for r in read_manifest(manifest) if (Path(r.image).name, Path(r.labels).name) not in keep]
        for r in old:
            r.image, r.labels = Path(r.image).name, Path(r.labels).name
    write_manifest(old + records, manifest)
    return records


def load_samples(manifest, split: str) -> list:
    out = []
    for r in read_manifest(manifest):
        if r.split != split:
            continue
        img, lab = load_volume(r.image, IntensityVolume), load_volume(r.labels, LabelVolume)
        if img.dims != lab.dims:
            raise ValueError(f"{r.image}: image {img.dims} and labels {lab.dims} differ")
        out.append(Sample(Path(r.image).name.removesuffix(".img.vvol"), img.data, lab.data, float(r.voxel_mm)))
    return out
