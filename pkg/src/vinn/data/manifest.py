"""Line-delimited JSON dataset manifests."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

SPLITS = ("train", "val", "test")


@dataclass
class ManifestRecord:
    image: str
    labels: str
    voxel_mm: float
    split: str
    seed: int

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_manifest(path) -> list:
    """Records with image/label paths resolved relative to the manifest's directory."""
    root = Path(path).resolve().parent
    out = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{i}: bad manifest line: {exc}") from exc
        d["image"] = str(root / d["image"])
        d["labels"] = str(root / d["labels"])
        out.append(ManifestRecord(**d))
    return out
