"""Network-integrated resolution normalization.

Latent feature maps at the native voxel size are resampled to a fixed inner
resolution (and back) with an axis-aligned sampling grid derived from the
known scale factor. Because the grid is a pure per-axis scaling, every
sampling kernel reduces to a separable pair of interpolation matrices and
the sampler is a :func:`~vinn.autograd.linear_map2d`.

Coordinates follow the half-pixel ("align corners false") convention: output
pixel ``j`` reads source coordinate ``(j + 0.5) * ratio - 0.5``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, linear_map2d

KERNELS = ("nn", "bilinear", "bicubic", "area")
MIN_INNER_DIM = 8
MIN_SF = 0.25
BICUBIC_A = -0.75


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ScaleFactor:
    """Native/inner resolution pair and the per-axis sampling ratio.

    ``sf_adjusted[k] * inner_dims[k] == native_dims[k]`` holds exactly in real
    arithmetic; ``native_dims`` is what the decoder restores.
    """

    res_native: float
    res_inner: float
    alpha: float
    native_dims: tuple | None
    inner_dims: tuple
    sf_adjusted: tuple

    @property
    def sf_ideal(self) -> float:
        return self.res_inner / self.res_native

    @property
    def is_identity(self) -> bool:
        return self.native_dims is not None and tuple(self.native_dims) == tuple(self.inner_dims)


def make_scale_factor(res_native: float, res_inner: float = 1.0, native_dims=(64, 64),
                      alpha: float = 0.0) -> ScaleFactor:
    if res_native <= 0 or res_inner <= 0:
        raise ValueError(f"resolutions must be positive, got native={res_native}, inner={res_inner}")
    sf = max(res_inner / res_native + alpha, MIN_SF)
    native_dims = tuple(int(n) for n in native_dims)
    inner = tuple(round_half_up(n / sf) for n in native_dims)
    if min(inner) < MIN_INNER_DIM:
        raise ValueError(f"latent map {inner} smaller than {MIN_INNER_DIM} pixels (SF={sf:.4f})")
    adjusted = tuple(n / i for n, i in zip(native_dims, inner))
    return ScaleFactor(float(res_native), float(res_inner), float(alpha), native_dims, inner, adjusted)


@dataclass(frozen=True)
class SamplingGrid:
    """Fractional source coordinates per output row and per output column.

    The grid is separable: the source row of output pixel (i, j) is
    ``rows[i]`` and its source column is ``cols[j]``.
    """

    rows: np.ndarray
    cols: np.ndarray
    ratio: tuple

    @property
    def shape(self) -> tuple:
        return (len(self.rows), len(self.cols))

    def full(self) -> np.ndarray:
        """(H, W, 2) array of (row, col) source coordinates."""
        rr, cc = np.meshgrid(self.rows, self.cols, indexing="ij")
        return np.stack([rr, cc], axis=-1)


def generate_grid(ratio, out_dims) -> SamplingGrid:
    """Grid reading source coordinate ``(dst + 0.5) * ratio - 0.5`` per axis.

    ``ratio`` is source pixels per output pixel: the adjusted scale factor for
    the encoder transition and its reciprocal for the decoder.
    """
    if isinstance(ratio, ScaleFactor):
        ratio = ratio.sf_adjusted
    if np.isscalar(ratio):
        ratio = (float(ratio), float(ratio))
    h, w = (int(d) for d in out_dims)
    if h < 1 or w < 1:
        raise ValueError(f"grid dims must be positive, got {out_dims}")
    rows = (np.arange(h, dtype=np.float64) + 0.5) * ratio[0] - 0.5
    cols = (np.arange(w, dtype=np.float64) + 0.5) * ratio[1] - 0.5
    return SamplingGrid(rows, cols, (float(ratio[0]), float(ratio[1])))


def _cubic(d: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    d = np.abs(d)
    near = ((a + 2) * d - (a + 3)) * d * d + 1
    far = ((a * d - 5 * a) * d + 8 * a) * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def interpolation_matrix(coords: np.ndarray, n_src: int, kernel: str, ratio: float) -> np.ndarray:
    """(len(coords), n_src) matrix of sampling weights along one axis.

    Out-of-range taps are clamped to the edge pixel.
    """
    coords = np.asarray(coords, dtype=np.float64)
    m = len(coords)
    mat = np.zeros((m, n_src), dtype=np.float64)
    rows = np.arange(m)
    if kernel == "nn":
        idx = np.clip(np.floor(coords + 0.5).astype(int), 0, n_src - 1)
        mat[rows, idx] = 1.0
    elif kernel == "bilinear":
        i0 = np.floor(coords).astype(int)
        t = coords - i0
        np.add.at(mat, (rows, np.clip(i0, 0, n_src - 1)), 1.0 - t)
        np.add.at(mat, (rows, np.clip(i0 + 1, 0, n_src - 1)), t)
    elif kernel == "bicubic":
        i0 = np.floor(coords).astype(int)
        t = coords - i0
        for off in (-1, 0, 1, 2):
            np.add.at(mat, (rows, np.clip(i0 + off, 0, n_src - 1)), _cubic(t - off))
    elif kernel == "area":
        # output pixel j covers the source span centred on its coordinate; the edge
        # pixels extend to infinity, which is clamp-to-edge for a box filter
        lo = coords + 0.5 - ratio / 2.0
        hi = coords + 0.5 + ratio / 2.0
        left = np.arange(n_src, dtype=np.float64)
        right = left + 1
        left[0], right[-1] = -np.inf, np.inf
        overlap = np.clip(np.minimum(hi[:, None], right) - np.maximum(lo[:, None], left), 0.0, None)
        mat = overlap / overlap.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown sampling kernel {kernel!r}; expected one of {KERNELS}")
    return mat


def sample(u: Tensor, grid: SamplingGrid, kernel: str = "bilinear") -> Tensor:
    """Resample every channel of ``u`` at the grid coordinates.

    The op is linear in ``u`` and differentiable with respect to it for all
    kernels; the grid itself is not a learnable input.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown sampling kernel {kernel!r}; expected one of {KERNELS}")
    _, _, h, w = u.shape
    r = interpolation_matrix(grid.rows, h, kernel, grid.ratio[0])
    c = interpolation_matrix(grid.cols, w, kernel, grid.ratio[1])
    return linear_map2d(u, r, c, op=f"sample_{kernel}")


def resolution_normalize(u: Tensor, sf: ScaleFactor, direction: str, kernel: str = "bilinear") -> Tensor:
    """Encode native-resolution features to the inner grid, or decode back.

    Decoding restores exactly ``sf.native_dims``.
    """
    h, w = u.shape[2:]
    if direction == "encode":
        if sf.native_dims is not None and (h, w) != tuple(sf.native_dims):
            raise ValueError(f"encode input {(h, w)} does not match native dims {sf.native_dims}")
        grid = generate_grid(sf.sf_adjusted, sf.inner_dims)
    elif direction == "decode":
        if sf.native_dims is None:
            raise ValueError("decode needs the stored native dims of the scale factor")
        if (h, w) != tuple(sf.inner_dims):
            raise ValueError(f"decode input {(h, w)} does not match inner dims {sf.inner_dims}")
        grid = generate_grid(tuple(1.0 / s for s in sf.sf_adjusted), sf.native_dims)
    else:
        raise ValueError(f"direction must be 'encode' or 'decode', got {direction!r}")
    return sample(u, grid, kernel)
