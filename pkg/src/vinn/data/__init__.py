from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .conform import conform
from .dataset import Sample, generate_dataset, load_samples, make_sample
from .labels import DESK_TABLE, LabelTable, LabelView
from .manifest import ManifestRecord, read_manifest, write_manifest
from .phantom import PhantomSpec, render_labels, render_phantom
from .slicing import SliceSet, restack, slice_plane, slice_planes
from .volume import IntensityVolume, LabelVolume, load_volume, save_volume

__all__ = [
    "CheckpointError", "DESK_TABLE", "IntensityVolume", "LabelTable", "LabelView", "LabelVolume",
    "ManifestRecord", "Sample", "generate_dataset", "load_samples", "make_sample", "PhantomSpec", "SliceSet", "conform", "load_checkpoint", "load_volume",
    "read_manifest", "render_labels", "render_phantom", "restack", "save_checkpoint", "save_volume",
    "slice_plane", "slice_planes", "write_manifest",
]
