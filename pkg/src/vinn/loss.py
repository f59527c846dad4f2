"""Composite logistic + soft-Dice loss and its per-pixel weight map.

The weight of pixel i is the sum of four non-negative terms: median
frequency balancing, a boundary term marking label edges, and two
morphological masks that emphasise the outer cortex and the sulci / thin
white-matter strands.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autograd as ag
from .autograd import Tensor

LOG_EPS = 1e-7


@dataclass
class WeightMap:
    median_freq: np.ndarray
    gradient: np.ndarray
    gm: np.ndarray
    wm_sulci: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.median_freq + self.gradient + self.gm + self.wm_sulci


@dataclass
class LossValue:
    total: Tensor
    logistic: float
    dice: float


def median_freq_weights(labels: np.ndarray, num_classes: int | None = None) -> np.ndarray:
    """w_c = median(freq) / freq(c) over the classes present; absent classes get 0."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("median frequency weights need a non-empty label array")
    n = int(labels.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(labels.ravel(), minlength=n)[:n].astype(np.float64)
    present = counts > 0
    freq = counts / counts.sum()
    weights = np.zeros(n)
    weights[present] = np.median(freq[present]) / freq[present]
    return weights


def gradient_weights(labels: np.ndarray) -> np.ndarray:
    """1 where the central difference of the label image is non-zero, else 0.

    A pixel is marked when its two neighbours along either axis carry
    different labels (one-sided at the border), so the band is two pixels
    wide at every edge and independent of the label values themselves.
    """
    labels = np.asarray(labels)
    edge = np.zeros(labels.shape, dtype=bool)
    for ax in range(labels.ndim):
        n = labels.shape[ax]
        if n < 2:
            continue
        idx = np.arange(n)
        after = np.take(labels, np.minimum(idx + 1, n - 1), axis=ax)
        before = np.take(labels, np.maximum(idx - 1, 0), axis=ax)
        edge |= after != before
    return edge.astype(np.float64)


def _square_windows(mask: np.ndarray, radius: int, fill: bool) -> np.ndarray:
    padded = np.pad(mask, radius, constant_values=fill)
    return sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1))


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)^2 square; outside the image is background."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    return _square_windows(mask, radius, False).any(axis=(-2, -1))


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion with a (2r+1)^2 square; outside the image is background."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    return _square_windows(mask, radius, False).all(axis=(-2, -1))


def closing(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilation then erosion, computed on a canvas padded by ``radius`` so the
    result always contains the input."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    big = np.pad(mask, radius)
    closed = erode(dilate(big, radius), radius)
    return closed[radius:-radius, radius:-radius]


def wm_sulci_mask(gm: np.ndarray, radius: int) -> np.ndarray:
    """Pixels added by closing the gray-matter map: deep sulci and thin WM strands."""
    gm = np.asarray(gm, dtype=bool)
    return closing(gm, radius) & ~gm


def outer_gm_mask(brain: np.ndarray, radius: int) -> np.ndarray:
    """Pixels lost by eroding the brain mask: the outer cortical band."""
    brain = np.asarray(brain, dtype=bool)
    return brain & ~erode(brain, radius)


def mask_radius(res_native: float, radius_mm: float = 2.0) -> int:
    """Structuring-element radius in pixels for a fixed physical size."""
    return max(1, int(np.floor(radius_mm / res_native + 0.5)))


def weight_map(labels: np.ndarray, class_weights: np.ndarray, gm_classes=(), brain_classes=(),
               radius: int = 2, hires: bool = True, w_hires: float = 1.0) -> WeightMap:
    """Per-pixel weights for one 2-D label slice (class indices)."""
    labels = np.asarray(labels)
    mf = np.asarray(class_weights, dtype=np.float64)[labels]
    grad = gradient_weights(labels)
    zeros = np.zeros(labels.shape)
    if not hires:
        return WeightMap(mf, grad, zeros, zeros.copy())
    gm = np.isin(labels, list(gm_classes))
    brain = np.isin(labels, list(brain_classes))
    return WeightMap(mf, grad, w_hires * outer_gm_mask(brain, radius), w_hires * wm_sulci_mask(gm, radius))


def composite_loss(p: Tensor, y: np.ndarray, omega: np.ndarray, reduction: str = "mean") -> LossValue:
    """Weighted logistic loss minus the soft Dice summed over classes.

    p: (N, L, H, W) probabilities; y: one-hot of the same shape; omega:
    (N, H, W) pixel weights. With ``reduction="mean"`` the logistic term is
    averaged over pixels, with ``"sum"`` it is summed.
    """
    y = np.asarray(y, dtype=p.dtype)
    if y.shape != p.shape:
        raise ValueError(f"prediction {p.shape} and target {y.shape} shapes differ")
    omega = np.asarray(omega, dtype=p.dtype)
    if omega.shape != (p.shape[0],) + p.shape[2:]:
        raise ValueError(f"weight map {omega.shape} does not match prediction {p.shape}")
    wy = y * omega[:, None]
    logp = ag.log(ag.clamp_min(p, LOG_EPS))
    logistic = ag.neg(ag.sum(ag.mul(logp, wy)))
    if reduction == "mean":
        logistic = ag.mul(logistic, 1.0 / omega.size)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")

    inter = ag.sum(ag.mul(p, y), axis=(0, 2, 3))
    denom = ag.add(ag.sum(p, axis=(0, 2, 3)), y.sum(axis=(0, 2, 3)))
    denom_safe = ag.clamp_min(denom, 1e-12)
    dice_vec = ag.mul(ag.mul(inter, 2.0), _reciprocal(denom_safe))
    dice = ag.sum(dice_vec)
    total = ag.sub(logistic, dice)
    return LossValue(total, float(logistic.data), float(dice.data))


def _reciprocal(x: Tensor) -> Tensor:
    inv = 1.0 / x.data
    return ag.make_node(inv, (x,), lambda g: (-g * inv * inv,), "reciprocal")


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(N, H, W) class indices -> (N, L, H, W) one-hot."""
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes) + labels.shape[1:], dtype=ag.get_dtype())
    np.put_along_axis(out, labels[:, None], 1.0, axis=1)
    return out
