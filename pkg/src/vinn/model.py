"""The three segmentation networks.

``cnn``       FastSurferCNN-style baseline: input block, 3 encoder CDBs,
              bottleneck, 4 decoder CDBs (5x5 kernels by default).
``cnn_star``  adds a pre-IDB and a post-CDB at native resolution, joined by
              a skip connection; the transition between them is the identity.
``vinn``      as ``cnn_star``, but the first encoder and last decoder
              transitions resample between native and inner resolution.

All other scale transitions are 2x2 max-pool / index unpool.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .blocks import (BlockConfig, Context, ParamFactory, Params, cdb_forward, idb_forward,
                     init_cdb, init_input_block, init_post_cdb, post_cdb_forward, pre_idb_forward)
from .resnorm import KERNELS, make_scale_factor, resolution_normalize

ARCHS = ("cnn", "cnn_star", "vinn")
PLANES = ("axial", "coronal", "sagittal")


@dataclass(frozen=True)
class NetworkSpec:
    arch: str = "vinn"
    num_classes: int = 9
    plane: str = "coronal"
    kernel: int = 3
    filters: int = 24
    sampler: str = "bilinear"
    res_inner: float = 1.0
    attention: bool = False
    attention_filters: int | None = None
    in_channels: int = 1
    depth: int = 4

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}, got {self.plane!r}")
        if self.sampler not in KERNELS:
            raise ValueError(f"sampler must be one of {KERNELS}, got {self.sampler!r}")
        if self.attention and self.arch == "cnn":
            raise ValueError("attention is placed in the pre-IDB/post-CDB, which cnn lacks")

    @property
    def block(self) -> BlockConfig:
        return BlockConfig((self.kernel, self.kernel), self.filters)

    @property
    def native_block(self) -> BlockConfig:
        """Config of the pre-IDB / post-CDB (where attention lives)."""
        f = self.attention_filters if (self.attention and self.attention_filters) else self.filters
        return BlockConfig((self.kernel, self.kernel), f, self.attention)

    @property
    def multiple(self) -> int:
        return 2 ** self.depth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _encoder_names(spec: NetworkSpec) -> list:
    return [f"enc{i}" for i in range(1, spec.depth + 1)]


def _declare(spec: NetworkSpec, f: ParamFactory) -> None:
    cfg = spec.block
    nat = spec.native_block
    if spec.arch == "cnn":
        init_input_block(f, "enc1", spec.in_channels, cfg)
    else:
        init_input_block(f, "pre_idb", spec.in_channels, nat)
        init_input_block(f, "enc1", nat.filters, cfg)
    for name in _encoder_names(spec)[1:]:
        init_cdb(f, name, cfg.filters, cfg)
    init_cdb(f, "bottleneck", cfg.filters, cfg)
    for i in range(spec.depth, 0, -1):
        init_cdb(f, f"dec{i}", cfg.filters, cfg)
    head_in = cfg.filters
    if spec.arch != "cnn":
        init_post_cdb(f, "post_cdb", cfg.filters + nat.filters, nat)
        head_in = nat.filters
    f.conv("classifier", head_in, spec.num_classes, (1, 1))


def build(spec: NetworkSpec, seed: int = 0) -> Params:
    """Deterministic He-initialised parameters (BN gamma 1 / beta 0, PReLU 0.25)."""
    params = Params()
    _declare(spec, ParamFactory(params, np.random.default_rng(seed)))
    return params


def count_parameters(spec: NetworkSpec) -> int:
    params = Params()
    _declare(spec, ParamFactory(params, None))
    return params.count()


def solve_attention_filters(spec: NetworkSpec) -> NetworkSpec:
    """Pick the pre-IDB/post-CDB filter count that keeps the attention net's
    parameter total closest to the same net without attention."""
    base = count_parameters(replace(spec, attention=False, attention_filters=None))
    best = min(range(1, 2 * spec.filters + 1),
               key=lambda fa: abs(count_parameters(replace(spec, attention=True, attention_filters=fa)) - base))
    return replace(spec, attention=True, attention_filters=best)


# -- forward ----------------------------------------------------------------

def _pad_amounts(n: int, multiple: int) -> tuple:
    total = math.ceil(n / multiple) * multiple - n
    return total // 2, total - total // 2


def _reflect_matrix(n: int, before: int, after: int) -> np.ndarray:
    return np.pad(np.eye(n), ((before, after), (0, 0)), mode="reflect")


def pad_to_multiple(x: Tensor, multiple: int):
    """Reflect-pad H and W up to a multiple; returns (padded, crop box)."""
    h, w = x.shape[2:]
    (t, b), (l, r) = _pad_amounts(h, multiple), _pad_amounts(w, multiple)
    if t == b == l == r == 0:
        return x, (0, 0, h, w)
    out = ag.linear_map2d(x, _reflect_matrix(h, t, b), _reflect_matrix(w, l, r), op="reflect_pad")
    return out, (t, l, h, w)


def _unet_core(x: Tensor, spec: NetworkSpec, params: Params, ctx: Context, first_block) -> Tensor:
    cfg = spec.block
    skips, indices = [], []
    h = x
    for i, name in enumerate(_encoder_names(spec)):
        h = first_block(h) if i == 0 else cdb_forward(h, params, name, cfg, ctx)
        skips.append(h)
        h, idx = ag.maxpool2(h)
        indices.append(idx)
    h = cdb_forward(h, params, "bottleneck", cfg, ctx)
    for i in range(spec.depth, 0, -1):
        up = ag.unpool2(h, indices[i - 1])
        h = cdb_forward(ag.maxout([up, skips[i - 1]]), params, f"dec{i}", cfg, ctx)
    return h


def forward(spec: NetworkSpec, params: Params, image: Tensor, res_native: float = 1.0,
            alpha: float = 0.0, ctx: Context | None = None, return_logits: bool = False) -> Tensor:
    """Class probabilities (N, classes, H, W) at the native input dims.

    ``res_native`` and ``alpha`` only matter for ``vinn``.
    """
    ctx = ctx or Context()
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if image.ndim != 4 or image.shape[1] != spec.in_channels:
        raise ValueError(f"expected (N, {spec.in_channels}, H, W) input, got {image.shape}")
    cfg = spec.block
    nat = spec.native_block
    m = spec.multiple

    if spec.arch == "cnn":
        xp, box = pad_to_multiple(image, m)
        h = _unet_core(xp, spec, params, ctx, lambda t: idb_forward(t, params, "enc1", cfg, ctx))
        h = ag.crop2d(h, *box)
    else:
        s0, skip = pre_idb_forward(image, params, "pre_idb", nat, ctx)
        sf = None
        if spec.arch == "vinn":
            sf = make_scale_factor(res_native, spec.res_inner, s0.shape[2:], alpha)
            s0 = resolution_normalize(s0, sf, "encode", spec.sampler)
        u, box = pad_to_multiple(s0, m)
        h = _unet_core(u, spec, params, ctx, lambda t: idb_forward(t, params, "enc1", cfg, ctx))
        h = ag.crop2d(h, *box)
        if sf is not None:
            h = resolution_normalize(h, sf, "decode", spec.sampler)
        h = post_cdb_forward(h, skip, params, "post_cdb", nat, ctx)
    logits = ag.conv2d(h, params["classifier.w"], params["classifier.b"])
    if return_logits:
        return logits
    return ag.softmax_channels(logits)
