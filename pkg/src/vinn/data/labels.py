"""Desk-scale label table with lateralized pairs and their merged classes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabelEntry:
    id: int
    name: str
    hemisphere: str  # left | right | none
    merged_id: int
    tissue: str


@dataclass(frozen=True)
class LabelView:
    """Ordered list of label ids a network predicts; class index k <-> ids[k]."""

    ids: tuple

    @property
    def num_classes(self) -> int:
        return len(self.ids)

    def encode(self, label_ids: np.ndarray) -> np.ndarray:
        lut = np.full(max(self.ids) + 1, -1, dtype=np.int64)
        lut[list(self.ids)] = np.arange(len(self.ids))
        label_ids = np.asarray(label_ids)
        if label_ids.size and (label_ids.max() >= len(lut) or (lut[label_ids] < 0).any()):
            bad = sorted(set(np.unique(label_ids).tolist()) - set(self.ids))
            raise ValueError(f"labels {bad} are not part of this view {self.ids}")
        return lut[label_ids]

    def decode(self, classes: np.ndarray) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int16)[np.asarray(classes)]


class LabelTable:
    def __init__(self, entries):
        self.entries = {e.id: e for e in entries}
        if 0 not in self.entries:
            raise ValueError("label table needs background id 0")
        self._merged = {e.id for e in entries if e.merged_id == e.id and e.hemisphere == "none"
                        and any(o.merged_id == e.id and o.id != e.id for o in entries)}

    def __iter__(self):
        return iter(self.entries.values())

    def name(self, label_id: int) -> str:
        return self.entries[label_id].name

    @property
    def lateral_ids(self) -> tuple:
        """Final output id space (every id that is not a merged class)."""
        return tuple(sorted(i for i in self.entries if i not in self._merged))

    @property
    def merged_ids(self) -> tuple:
        return tuple(sorted(self._merged))

    @property
    def sagittal_ids(self) -> tuple:
        return tuple(sorted({self.entries[i].merged_id for i in self.lateral_ids}))

    @property
    def structure_ids(self) -> tuple:
        return tuple(i for i in self.lateral_ids if i != 0)

    def wm_id(self, hemisphere: str) -> int:
        return self._find("wm", hemisphere)

    def _find(self, tissue: str, hemisphere: str) -> int:
        for e in self.entries.values():
            if e.tissue == tissue and e.hemisphere == hemisphere:
                return e.id
        raise KeyError(f"no {tissue} entry for hemisphere {hemisphere}")

    def children(self, merged_id: int) -> tuple:
        return tuple(i for i in self.lateral_ids if self.entries[i].merged_id == merged_id and i != merged_id)

    def lateral_child(self, merged_id: int, hemisphere: str) -> int:
        for i in self.children(merged_id):
            if self.entries[i].hemisphere == hemisphere:
                return i
        raise KeyError(f"merged id {merged_id} has no {hemisphere} child")

    def to_merged(self, label_ids: np.ndarray, only=None) -> np.ndarray:
        """Map lateralized ids to their merged id (restricted to ``only`` merged ids)."""
        lut = np.arange(max(self.entries) + 1, dtype=np.int16)
        for e in self.entries.values():
            if only is None or e.merged_id in only:
                lut[e.id] = e.merged_id
        return lut[np.asarray(label_ids)]

    def tissue_ids(self, *tissues: str) -> tuple:
        return tuple(e.id for e in self.entries.values() if e.tissue in tissues)

    def view(self, plane: str, merge_cortex: bool = False) -> LabelView:
        if plane == "sagittal":
            return LabelView(self.sagittal_ids)
        if merge_cortex:
            gm = self.entries[self.wm_gm_merged("gm")].id
            ids = sorted({gm if self.entries[i].tissue == "gm" else i for i in self.lateral_ids})
            return LabelView(tuple(ids))
        return LabelView(self.lateral_ids)

    def wm_gm_merged(self, tissue: str) -> int:
        return self._find(tissue, "none")


# ids 0..8 are the lateralized output space, 9..11 the merged classes
DESK_TABLE = LabelTable([
    LabelEntry(0, "background", "none", 0, "bg"),
    LabelEntry(1, "csf", "none", 1, "csf"),
    LabelEntry(2, "left-wm", "left", 9, "wm"),
    LabelEntry(3, "right-wm", "right", 9, "wm"),
    LabelEntry(4, "left-gm", "left", 10, "gm"),
    LabelEntry(5, "right-gm", "right", 10, "gm"),
    LabelEntry(6, "left-subcortical", "left", 11, "sub"),
    LabelEntry(7, "right-subcortical", "right", 11, "sub"),
    LabelEntry(8, "brainstem", "none", 8, "stem"),
    LabelEntry(9, "wm", "none", 9, "wm"),
    LabelEntry(10, "gm", "none", 10, "gm"),
    LabelEntry(11, "subcortical", "none", 11, "sub"),
])
