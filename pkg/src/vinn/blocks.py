"""Competitive dense blocks and their input/output variants.

A composite unit is PReLU -> Conv -> BN. Units are chained with maxout local
skips: every new BN output competes elementwise with the running maximum of
the previous outputs. The last unit is not maxed, so a block always returns
a BN output and every maxout downstream sees normalized inputs. Input blocks
replace the first PReLU by a BN so raw intensities are normalized before the
first convolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class BlockConfig:
    kernel: tuple = (3, 3)
    filters: int = 24
    attention: bool = False

    @property
    def unit_kernels(self) -> tuple:
        """Kernel of each composite unit.

        Four 3x3 units and two 5x5 units followed by a 1x1 both give a 9x9
        receptive field per block.
        """
        if tuple(self.kernel) == (3, 3):
            return ((3, 3),) * 4
        if tuple(self.kernel) == (5, 5):
            return ((5, 5), (5, 5), (1, 1))
        raise ValueError(f"unsupported block kernel {self.kernel}")

    @property
    def conv_count(self) -> int:
        return len(self.unit_kernels)

    @property
    def receptive_field(self) -> int:
        return 1 + sum(k[0] - 1 for k in self.unit_kernels)


@dataclass
class Context:
    training: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5


class Params:
    """Named learnable tensors plus batch-norm running statistics."""

    def __init__(self):
        self.weights: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.weights[name]

    def __contains__(self, name: str) -> bool:
        return name in self.weights

    def count(self) -> int:
        return int(sum(t.data.size for t in self.weights.values()))

    def zero_grad(self) -> None:
        for t in self.weights.values():
            t.grad = None

    def state_arrays(self) -> dict:
        out = {k: v.data for k, v in self.weights.items()}
        out.update(self.buffers)
        return out


class ParamFactory:
    """Creates parameters in a fixed order from one RNG stream.

    With ``rng=None`` only shapes matter (parameter counting).
    """

    def __init__(self, params: Params, rng: np.random.Generator | None):
        self.params = params
        self.rng = rng

    def _add(self, name: str, arr: np.ndarray) -> None:
        if name in self.params.weights:
            raise KeyError(f"duplicate parameter {name}")
        self.params.weights[name] = Tensor(arr, requires_grad=True)

    def conv(self, name: str, cin: int, cout: int, kernel) -> None:
        k1, k2 = kernel
        fan_in = cin * k1 * k2
        if self.rng is None:
            w = np.zeros((cout, cin, k1, k2))
        else:
            w = self.rng.standard_normal((cout, cin, k1, k2)) * np.sqrt(2.0 / fan_in)
        self._add(f"{name}.w", w)
        self._add(f"{name}.b", np.zeros(cout))

    def bn(self, name: str, c: int) -> None:
        self._add(f"{name}.gamma", np.ones(c))
        self._add(f"{name}.beta", np.zeros(c))
        self.params.buffers[f"{name}.mean"] = np.zeros(c, dtype=ag.get_dtype())
        self.params.buffers[f"{name}.var"] = np.ones(c, dtype=ag.get_dtype())

    def prelu(self, name: str, c: int) -> None:
        self._add(f"{name}.a", np.full(c, 0.25))


# -- primitive wrappers ----------------------------------------------------

def _conv(x, p: Params, name):
    return ag.conv2d(x, p[f"{name}.w"], p[f"{name}.b"])


def _bn(x, p: Params, name, ctx: Context):
    return ag.batch_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"], p.buffers[f"{name}.mean"],
                         p.buffers[f"{name}.var"], ctx.training, ctx.bn_momentum, ctx.bn_eps)


def _unit(x, p: Params, name: str, i: int, ctx: Context):
    return _bn(_conv(ag.prelu(x, p[f"{name}.prelu{i}.a"]), p, f"{name}.conv{i}"), p, f"{name}.bn{i}", ctx)


def _compete(running, new):
    return ag.maxout([running, new]) if running.shape == new.shape else new


# -- construction -----------------------------------------------------------

def init_cdb(f: ParamFactory, name: str, cin: int, cfg: BlockConfig, first: int = 1) -> None:
    c = cin
    for i, k in enumerate(cfg.unit_kernels[first - 1:], first):
        f.prelu(f"{name}.prelu{i}", c)
        f.conv(f"{name}.conv{i}", c, cfg.filters, k)
        f.bn(f"{name}.bn{i}", cfg.filters)
        c = cfg.filters


def init_input_block(f: ParamFactory, name: str, cin: int, cfg: BlockConfig) -> None:
    f.bn(f"{name}.bn0", cin)
    f.conv(f"{name}.conv1", cin, cfg.filters, cfg.unit_kernels[0])
    f.bn(f"{name}.bn1", cfg.filters)
    _init_tail(f, name, cfg)


def init_post_cdb(f: ParamFactory, name: str, cin: int, cfg: BlockConfig) -> None:
    f.prelu(f"{name}.prelu1", cin)
    f.conv(f"{name}.conv1", cin, cfg.filters, cfg.unit_kernels[0])
    f.bn(f"{name}.bn1", cfg.filters)
    _init_tail(f, name, cfg)


def _init_tail(f: ParamFactory, name: str, cfg: BlockConfig) -> None:
    init_cdb(f, name, cfg.filters, cfg, first=2)
    if cfg.attention:
        half = max(1, cfg.filters // 2)
        f.conv(f"{name}.att1", cfg.filters, half, (3, 3))
        f.prelu(f"{name}.att_prelu", half)
        f.conv(f"{name}.att2", half, cfg.conv_count, (1, 1))


# -- forward ----------------------------------------------------------------

def cdb_forward(x: Tensor, p: Params, name: str, cfg: BlockConfig, ctx: Context, first: int = 1) -> Tensor:
    """Standard competitive dense block; output has ``cfg.filters`` channels."""
    m = x
    for i in range(first, cfg.conv_count + 1):
        new = _unit(m, p, name, i, ctx)
        m = new if i == cfg.conv_count else _compete(m, new)
    return m


def attention_maps(x: Tensor, p: Params, name: str) -> Tensor:
    """Per-pixel softmax weights, one channel per competing response."""
    z = _conv(x, p, f"{name}.att1")
    z = ag.prelu(z, p[f"{name}.att_prelu.a"])
    return ag.softmax_channels(_conv(z, p, f"{name}.att2"))


def attention_cdb_forward(x: Tensor, p: Params, name: str, cfg: BlockConfig, ctx: Context,
                          first: int = 2) -> Tensor:
    """Attention-weighted competition over units ``first..conv_count``.

    With responses H_1..H_n of the remaining units and softmax maps
    lam_0..lam_n::

        c_1 = max(lam_1 * H_1(x), lam_0 * x)
        c_k = max(lam_k * H_k(c_{k-1}), c_{k-1})
        out = lam_n * H_n(c_{n-1})
    """
    lam = attention_maps(x, p, name)
    units = list(range(first, cfg.conv_count + 1))
    n = len(units)
    if lam.shape[1] != n + 1:
        raise ValueError(f"{name}: {lam.shape[1]} attention maps for {n} units")
    weight = [ag.select_channels(lam, k, k + 1) for k in range(n + 1)]
    src, c = x, ag.mul(weight[0], x)
    for k, i in enumerate(units, 1):
        h = ag.mul(weight[k], _unit(src, p, name, i, ctx))
        c = h if k == n else ag.maxout([h, c])
        src = c
    return c


def _tail(m: Tensor, p: Params, name: str, cfg: BlockConfig, ctx: Context) -> Tensor:
    if cfg.attention:
        return attention_cdb_forward(m, p, name, cfg, ctx)
    return cdb_forward(m, p, name, cfg, ctx, first=2)


def idb_forward(x_raw: Tensor, p: Params, name: str, cfg: BlockConfig, ctx: Context) -> Tensor:
    """Input block: BN -> Conv -> BN, then the competitive composite units."""
    m = _bn(_conv(_bn(x_raw, p, f"{name}.bn0", ctx), p, f"{name}.conv1"), p, f"{name}.bn1", ctx)
    return _tail(m, p, name, cfg, ctx)


def pre_idb_forward(x_raw: Tensor, p: Params, name: str, cfg: BlockConfig, ctx: Context):
    """Input block at native resolution; returns (features, skip) where the
    skip bypasses the resolution change and feeds the post-CDB."""
    out = idb_forward(x_raw, p, name, cfg, ctx)
    return out, out


def post_cdb_forward(upsampled: Tensor, skip_native: Tensor, p: Params, name: str,
                     cfg: BlockConfig, ctx: Context) -> Tensor:
    if upsampled.shape[2:] != skip_native.shape[2:]:
        raise ValueError(f"post-CDB spatial mismatch: {upsampled.shape[2:]} vs {skip_native.shape[2:]}")
    x = ag.concat_channels([upsampled, skip_native])
    m = _unit(x, p, name, 1, ctx)
    return _tail(m, p, name, cfg, ctx)
