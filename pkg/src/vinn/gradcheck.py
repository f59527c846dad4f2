"""Central finite-difference checks of the analytic gradients (64-bit)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .loss import composite_loss
from .resnorm import make_scale_factor, resolution_normalize

FD_EPS = 1e-6
TOLERANCE = 1e-3


@dataclass
class CheckResult:
    op: str
    seed: int
    rel_err: float
    passed: bool


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = FD_EPS, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place).

    ``index`` restricts the probe to a subset of flat positions; other entries stay 0.
    """
    g = np.zeros(arr.shape)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if index is None else index):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def check_function(build: Callable[[list], Tensor], inputs: list, eps: float = FD_EPS, index=None) -> float:
    """``build(tensors)`` returns a scalar Tensor; compares grads of every input."""
    tensors = [Tensor(a, requires_grad=True) for a in inputs]
    build(tensors).backward()
    worst = 0.0
    for t in tensors:
        def f():
            with ag.no_grad():
                return float(build([Tensor(x.data) for x in tensors]).data)
        num = numeric_grad(f, t.data, eps, index)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        if index is not None:
            mask = np.zeros(t.data.size, bool)
            mask[list(index)] = True
            ana, num = ana.reshape(-1)[mask], num.reshape(-1)[mask]
        worst = max(worst, rel_error(ana, num))
    return worst


def _projection(shape, rng):
    return rng.normal(size=shape)


def _case_conv(rng):
    k = int(rng.choice([1, 3, 5]))
    cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    h, w = int(rng.integers(k, k + 3)), int(rng.integers(k, k + 3))
    x, wt, b = rng.normal(size=(2, cin, h, w)), rng.normal(size=(cout, cin, k, k)), rng.normal(size=cout)
    r = _projection((2, cout, h, w), rng)
    return lambda t: ag.sum(ag.mul(ag.conv2d(t[0], t[1], t[2]), r)), [x, wt, b]


def _case_bn(rng):
    c = int(rng.integers(1, 4))
    x = rng.normal(size=(3, c, 3, 4)) * rng.uniform(0.5, 2) + rng.normal()
    g, b = rng.normal(size=c), rng.normal(size=c)
    r = _projection(x.shape, rng)

    def build(t):
        rm, rv = np.zeros(c), np.ones(c)
        return ag.sum(ag.mul(ag.batch_norm(t[0], t[1], t[2], rm, rv, True), r))
    return build, [x, g, b]


def _case_prelu(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-3] += 0.01
    a = rng.uniform(-0.5, 1.0, size=3)
    r = _projection(x.shape, rng)
    return lambda t: ag.sum(ag.mul(ag.prelu(t[0], t[1]), r)), [x, a]


def _case_maxout(rng):
    n = int(rng.integers(2, 4))
    xs = [rng.normal(size=(1, 2, 3, 3)) for _ in range(n)]
    r = _projection(xs[0].shape, rng)
    return lambda t: ag.sum(ag.mul(ag.maxout(t), r)), xs


def _case_softmax(rng):
    x = rng.normal(size=(2, 4, 3, 3)) * 2
    r = _projection(x.shape, rng)
    return lambda t: ag.sum(ag.mul(ag.softmax_channels(t[0]), r)), [x]


def _case_loss(rng):
    n, c, h, w = 2, 3, 4, 4
    logits = rng.normal(size=(n, c, h, w))
    y = np.eye(c)[rng.integers(0, c, size=(n, h, w))].transpose(0, 3, 1, 2)
    omega = rng.uniform(0.5, 3.0, size=(n, h, w))
    red = str(rng.choice(["mean", "sum"]))
    return lambda t: composite_loss(ag.softmax_channels(t[0]), y, omega, red).total, [logits]


def _sampler_case(kernel):
    def case(rng):
        h, w = int(rng.integers(14, 20)), int(rng.integers(14, 20))
        res = float(rng.uniform(0.8, 1.4))
        sf = make_scale_factor(res, 1.0, (h, w), float(rng.normal(0, 0.05)))
        u = rng.normal(size=(1, 2, h, w))
        direction = str(rng.choice(["encode", "decode"]))
        if direction == "decode":
            u = rng.normal(size=(1, 2) + sf.inner_dims)
            r = _projection((1, 2, h, w), rng)
        else:
            r = _projection((1, 2) + sf.inner_dims, rng)
        return lambda t: ag.sum(ag.mul(resolution_normalize(t[0], sf, direction, kernel), r)), [u]
    return case


def _case_pool(rng):
    x = rng.normal(size=(1, 2, 4, 6))
    r = _projection((1, 2, 4, 6), rng)

    def build(t):
        p, idx = ag.maxpool2(t[0])
        return ag.sum(ag.mul(ag.unpool2(ag.mul(p, p), idx), r))
    return build, [x]


CASES = {
    "conv2d": _case_conv,
    "batch_norm": _case_bn,
    "prelu": _case_prelu,
    "maxout": _case_maxout,
    "softmax": _case_softmax,
    "loss": _case_loss,
    "sampler_bilinear": _sampler_case("bilinear"),
    "sampler_bicubic": _sampler_case("bicubic"),
    "sampler_area": _sampler_case("area"),
    "sampler_nn": _sampler_case("nn"),
    "pool_unpool": _case_pool,
}


def run_suite(seeds: int = 100, ops=None, tol: float = TOLERANCE, first_seed: int = 0) -> list:
    results = []
    with ag.precision(64):
        for op in ops or CASES:
            for seed in range(first_seed, first_seed + seeds):
                build, inputs = CASES[op](np.random.default_rng(seed))
                err = check_function(build, inputs)
                results.append(CheckResult(op, seed, err, err < tol))
    return results
