"""Scale augmentation outside (exSA) and inside (inSA) the network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .resnorm import generate_grid, interpolation_matrix, round_half_up


@dataclass
class ExsaConfig:
    enabled: bool = False
    range_lo: float = 0.8
    range_hi: float = 1.15

    def __post_init__(self):
        if not 0 < self.range_lo <= self.range_hi:
            raise ValueError(f"invalid exSA range [{self.range_lo}, {self.range_hi}]")


@dataclass
class InsaConfig:
    enabled: bool = False
    sigma: float = 0.1
    mu: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"inSA sigma must be >= 0, got {self.sigma}")


@dataclass
class AugmentConfig:
    exsa: ExsaConfig = field(default_factory=ExsaConfig)
    insa: InsaConfig = field(default_factory=InsaConfig)


def _resize_matrices(shape, s: float, kernel: str):
    h, w = shape
    out = (max(1, round_half_up(s * h)), max(1, round_half_up(s * w)))
    grid = generate_grid((h / out[0], w / out[1]), out)
    r = interpolation_matrix(grid.rows, h, kernel, grid.ratio[0])
    c = interpolation_matrix(grid.cols, w, kernel, grid.ratio[1])
    return r, c


def rescale_image(image: np.ndarray, s: float) -> np.ndarray:
    """Bilinear FOV-preserving resample of a 2-D image to round(s * dims)."""
    r, c = _resize_matrices(image.shape, s, "bilinear")
    return r @ np.asarray(image, dtype=np.float64) @ c.T


def rescale_labels(labels: np.ndarray, s: float) -> np.ndarray:
    """Nearest-neighbour resample of a 2-D label map; never invents labels."""
    r, c = _resize_matrices(labels.shape, s, "nn")
    return labels[np.ix_(r.argmax(axis=1), c.argmax(axis=1))]


def exsa_apply(image: np.ndarray, labels: np.ndarray, s: float, cfg: ExsaConfig | None = None):
    """Rescale an image (bilinear) and its labels (NN) by ``s`` about the centre."""
    cfg = cfg or ExsaConfig(enabled=True)
    if not cfg.range_lo <= s <= cfg.range_hi:
        raise ValueError(f"scale {s} outside [{cfg.range_lo}, {cfg.range_hi}]")
    if image.shape != labels.shape:
        raise ValueError(f"image {image.shape} and labels {labels.shape} differ")
    if s == 1.0:
        return np.array(image, copy=True), np.array(labels, copy=True)
    return rescale_image(image, s).astype(image.dtype, copy=False), rescale_labels(labels, s)


def exsa_sample(cfg: ExsaConfig, rng: np.random.Generator) -> float:
    if not cfg.enabled:
        return 1.0
    return float(rng.uniform(cfg.range_lo, cfg.range_hi))


def fit_canvas(arr: np.ndarray, shape, fill=0) -> np.ndarray:
    """Centre-crop or pad a 2-D array to ``shape``."""
    out = np.full(shape, fill, dtype=arr.dtype)
    h, w = arr.shape
    H, W = shape
    sy, dy = max(0, (h - H) // 2), max(0, (H - h) // 2)
    sx, dx = max(0, (w - W) // 2), max(0, (W - w) // 2)
    ch, cw = min(h, H), min(w, W)
    out[dy:dy + ch, dx:dx + cw] = arr[sy:sy + ch, sx:sx + cw]
    return out


def insa_sample(cfg: InsaConfig, rng: np.random.Generator, training: bool = True) -> float:
    """Scale-factor offset alpha for one training step (0 at inference)."""
    if not training or not cfg.enabled or cfg.sigma == 0:
        return 0.0
    return float(rng.normal(cfg.mu, cfg.sigma))
