"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-6, 8 and 9 train real models and take most of the runtime. The
trained models are shared through a session-scoped cache so each is trained
once per session.
"""
import functools
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage
from threadpoolctl import threadpool_limits

import oracles
from vinn import autograd as ag
from vinn.augment import AugmentConfig, ExsaConfig
from vinn.autograd import Tensor
from vinn.data import DESK_TABLE, IntensityVolume, PhantomSpec, conform, make_sample, render_labels, render_phantom
from vinn.data.checkpoint import encode_checkpoint, load_checkpoint, save_checkpoint
from vinn.data.dataset import Sample
from vinn.data.phantom import downsample_image, downsample_labels
from vinn.eval import evaluate_segmentation, restore_laterality
from vinn.loss import closing, dilate, erode, outer_gm_mask, wm_sulci_mask
from vinn.model import NetworkSpec
from vinn.resnorm import KERNELS, generate_grid, make_scale_factor, resolution_normalize, sample
from vinn.train import LossConfig, PlaneModel, TrainConfig, segment, train, train_plane

pytestmark = pytest.mark.slow

# desk-scale training recipe shared by every trained experiment
DESK_NET = NetworkSpec(filters=16)
STRUCTURES = DESK_TABLE.structure_ids
GM_IDS, SUB_IDS = (4, 5), (6, 7)
# criterion 8 regression floor: reference run 96.76 minus 2
PINNED_VAL_DSC = 94.7


def desk_config(**kw) -> TrainConfig:
    base = dict(epochs=20, slice_stride=4, restart_mult=1.0, val_every=20, planes=("coronal",),
                network=DESK_NET)
    base.update(kw)
    return TrainConfig(**base)


# -- criterion 1 -------------------------------------------------------------------

def _close(a, b) -> float:
    return float(np.abs(np.asarray(a, np.float64) - b).max() / max(1.0, np.abs(b).max()))


def _op_instances(rng):
    """Yield (op, exact?, error) for one randomized instance of every op."""
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    h, w = int(rng.integers(3, 8)), int(rng.integers(3, 8))
    x = rng.normal(size=(n, c, h, w))

    k = int(rng.choice([1, 3, 5]))
    o = int(rng.integers(1, 4))
    wt, b = rng.normal(size=(o, c, k, k)), rng.normal(size=o)
    yield "conv2d", False, _close(ag.conv2d(Tensor(x), Tensor(wt), Tensor(b)).data, oracles.conv2d(x, wt, b))

    g, be = rng.normal(size=c), rng.normal(size=c)
    xb = x if n * h * w > 1 else rng.normal(size=(2, c, h, w))
    got = ag.batch_norm(Tensor(xb), Tensor(g), Tensor(be), np.zeros(c), np.ones(c), True).data
    yield "batch_norm", False, _close(got, oracles.batch_norm(xb, g, be))

    a = rng.normal(size=c)
    yield "prelu", True, _close(ag.prelu(Tensor(x), Tensor(a)).data, oracles.prelu(x, a))

    xs = [rng.integers(-3, 4, size=x.shape).astype(float) for _ in range(int(rng.integers(2, 5)))]
    yield "maxout", True, _close(ag.maxout([Tensor(v) for v in xs]).data, oracles.maxout(xs)[0])

    even = (n, c, 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4)))
    xq = rng.integers(-2, 3, size=even).astype(float)
    pooled, idx = ag.maxpool2(Tensor(xq))
    ref, ref_idx = oracles.maxpool2(xq)
    yield "maxpool2", True, max(_close(pooled.data, ref), float(np.any(idx != ref_idx)))
    yield "unpool2", True, _close(ag.unpool2(pooled, idx).data, oracles.unpool2(ref, ref_idx))

    yield "softmax", False, _close(ag.softmax_channels(Tensor(3 * x)).data, oracles.softmax_channels(3 * x))

    kern = KERNELS[int(rng.integers(len(KERNELS)))]
    ratio = tuple(float(r) for r in rng.uniform(0.5, 2.0, size=2))
    grid = generate_grid(ratio, (int(rng.integers(2, 9)), int(rng.integers(2, 9))))
    got = sample(Tensor(x), grid, kern).data
    yield f"sample_{kern}", False, _close(got, oracles.sample(x, grid.rows, grid.cols, kern, grid.ratio))

    m = rng.random(size=(int(rng.integers(3, 15)), int(rng.integers(3, 15)))) < rng.uniform(0.2, 0.8)
    r = int(rng.integers(1, 4))
    bad = sum(int(np.any(f(m, r) != ref(m, r))) for f, ref in (
        (dilate, oracles.dilate), (erode, oracles.erode), (closing, oracles.closing),
        (wm_sulci_mask, oracles.wm_sulci), (outer_gm_mask, oracles.outer_gm)))
    yield "morphology", True, float(bad)


def test_criterion_1_op_oracles(criterion):
    t0 = time.perf_counter()
    counts, failing = {}, set()
    with ag.precision(64):
        for seed in range(100):
            for op, exact, err in _op_instances(np.random.default_rng(seed)):
                fam = "sample" if op.startswith("sample_") else op
                counts[fam] = counts.get(fam, 0) + 1
                if not (err == 0.0 if exact else err < 1e-12):
                    failing.add(op)
    secs = time.perf_counter() - t0
    total = sum(counts.values())
    failing = sorted(failing)
    passed = not failing and total >= 500 and secs < 120
    criterion(1, passed, f"{total} instances over {len(counts)} op families in {secs:.1f}s; "
                         f"failing ops: {failing or 'none'}")
    assert passed


# -- criterion 2 -------------------------------------------------------------------

def test_criterion_2_gradcheck_cli(criterion):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "vinn.cli", "gradcheck", "--seeds", "100"],
                          capture_output=True, text=True, env=dict(os.environ, VINN_THREADS="1"))
    lines = [ln for ln in proc.stdout.splitlines() if "passed" in ln]
    needed = {"conv2d", "batch_norm", "prelu", "maxout", "softmax", "loss",
              "sampler_bilinear", "sampler_bicubic", "sampler_area"}
    seen = {ln.split()[0] for ln in lines if ln.split()[1] == "100/100"}
    passed = proc.returncode == 0 and needed <= seen
    criterion(2, passed, f"gradcheck exit {proc.returncode}, {len(lines)} ops x 100 seeds in "
                         f"{time.perf_counter() - t0:.0f}s; missing: {sorted(needed - seen) or 'none'}")
    print(proc.stdout)
    assert passed


# -- criterion 3 -------------------------------------------------------------------

def _band_limited(seed, n=140):
    u = ndimage.gaussian_filter(np.random.default_rng(seed).normal(size=(n, n)), 4.0, mode="wrap")
    return u / np.abs(u).max()


def test_criterion_3_resnorm_identity_round_trip(criterion):
    identity_ok = True
    rng = np.random.default_rng(0)
    for kern in KERNELS:
        for dims in ((17, 23), (64, 64), (9, 40)):
            u = rng.normal(size=(2, 3) + dims)
            sf = make_scale_factor(1.0, 1.0, dims)
            enc = resolution_normalize(Tensor(u), sf, "encode", kern)
            dec = resolution_normalize(enc, sf, "decode", kern)
            identity_ok &= bool(np.array_equal(enc.data, u.astype(enc.data.dtype))
                                and np.array_equal(dec.data, enc.data))
    worst = {}
    with ag.precision(64):
        for kern in KERNELS:
            for res in (0.7, 0.8, 1.4):
                sf = make_scale_factor(res, 1.0, (140, 140))
                for seed in range(20):
                    u = _band_limited(seed)
                    back = resolution_normalize(resolution_normalize(Tensor(u[None, None]), sf, "encode", kern),
                                                sf, "decode", kern).data[0, 0]
                    worst[kern] = max(worst.get(kern, 0.0), float(np.abs(back - u).max()))
    trip_ok = worst["bilinear"] < 0.05 and worst["bicubic"] < 0.05
    passed = identity_ok and trip_ok
    detail = ", ".join(f"{k} {v:.3f}" for k, v in worst.items())
    criterion(3, passed, f"SF=1 identity {'exact' if identity_ok else 'BROKEN'}; "
                         f"round-trip max error {detail} (bound 0.05 on interpolating kernels)")
    assert passed


# -- shared experiments ---------------------------------------------------------------

def _plane_model(res) -> PlaneModel:
    return PlaneModel(res.spec, res.params, res.view)


def _evaluate(models, samples, tag=""):
    records = []
    for s in samples:
        seg = segment(models, s.image, s.voxel_mm)
        records += evaluate_segmentation(s.labels, seg, s.voxel_mm, STRUCTURES, s.name, tag)
    return records


def _mean(records, metric="dsc", ids=STRUCTURES):
    vals = [getattr(r, metric) for r in records if r.structure in ids]
    return float(np.nanmean(vals))


def _coarse_sample(seed, fine_mm):
    """Twice-coarser volume: block-averaged image, majority-vote labels."""
    img, lab = render_phantom(PhantomSpec(seed=seed), fine_mm)
    coarse = IntensityVolume(downsample_image(img.data.astype(np.float64)), 2 * fine_mm)
    return Sample(f"phantom_s{seed}_v{2 * fine_mm:g}", conform(coarse).data, downsample_labels(lab.data),
                  2 * fine_mm)


class Experiments:
    """Lazily trained coronal models for criteria 4-6, three-plane run for 8-9."""

    TEST_SEEDS = (200, 201, 202)

    def __init__(self):
        self.seconds = {}

    @functools.cached_property
    def train_mix(self):
        return [make_sample(s, v) for v in (0.7, 1.0) for s in range(4)]

    @functools.cached_property
    def suite(self):
        return [make_sample(s, v) for v in (0.7, 0.8, 1.0) for s in self.TEST_SEEDS]

    @functools.cached_property
    def extrapolation(self):
        return {0.8: [make_sample(s, 0.8) for s in self.TEST_SEEDS],
                1.4: [_coarse_sample(s, 0.7) for s in self.TEST_SEEDS],
                1.6: [_coarse_sample(s, 0.8) for s in self.TEST_SEEDS]}

    @functools.cache
    def coronal(self, name: str):
        variants = {
            "vinn_nn": dict(network=replace(DESK_NET, sampler="nn")),
            "vinn_bilinear": dict(network=replace(DESK_NET, sampler="bilinear")),
            "vinn_bicubic": dict(network=replace(DESK_NET, sampler="bicubic")),
            "vinn_area": dict(network=replace(DESK_NET, sampler="area")),
            "cnn_star_exsa": dict(network=replace(DESK_NET, arch="cnn_star"),
                                  augment=AugmentConfig(exsa=ExsaConfig(enabled=True))),
            "vinn_no_hires": dict(loss=LossConfig(hires=False)),
        }
        t0 = time.perf_counter()
        with threadpool_limits(1):
            res = train_plane(self.train_mix, "coronal", desk_config(**variants[name]))
        self.seconds[name] = time.perf_counter() - t0
        return {"coronal": _plane_model(res)}

    @functools.cached_property
    def reference(self):
        """Three-plane desk run on 12 phantoms (4 each at 0.7/0.8/1.0 mm)."""
        train_s = [make_sample(s, v) for v in (0.7, 0.8, 1.0) for s in range(4)]
        val_s = [make_sample(100 + i, v) for i, v in enumerate((0.7, 0.8, 1.0))]
        cfg = desk_config(planes=("axial", "coronal", "sagittal"))
        steps = []
        t0 = time.perf_counter()
        with threadpool_limits(1):
            results = train(cfg, train_s, val_s, on_step=lambda *a: steps.append(a))
        seconds = time.perf_counter() - t0
        rerun = []
        with threadpool_limits(1):
            train_plane(train_s, "coronal", replace(cfg, epochs=2), val_s, on_step=lambda *a: rerun.append(a))
        return dict(cfg=cfg, results=results, steps=steps, rerun=rerun, seconds=seconds, val=val_s,
                    models={p: _plane_model(r) for p, r in results.items()})


@pytest.fixture(scope="session")
def experiments():
    return Experiments()


# -- criterion 4 -------------------------------------------------------------------

def test_criterion_4_kernel_ablation(experiments, criterion):
    t0 = time.perf_counter()
    scores = {}
    for kern in ("nn", "bilinear", "bicubic", "area"):
        recs = _evaluate(experiments.coronal(f"vinn_{kern}"), experiments.suite, kern)
        scores[kern] = (_mean(recs, "dsc"), _mean(recs, "asd"))
    minutes = (time.perf_counter() - t0) / 60
    dsc = {k: v[0] for k, v in scores.items()}
    nn_worse = dsc["nn"] < dsc["bilinear"] and scores["nn"][1] > scores["bilinear"][1]
    spread = max(dsc[k] for k in ("bilinear", "bicubic", "area")) - min(dsc[k] for k in ("bilinear", "bicubic", "area"))
    passed = nn_worse and spread < 1.0 and minutes <= 60
    detail = "; ".join(f"{k} DSC {d:.2f} ASD {a:.3f}" for k, (d, a) in scores.items())
    criterion(4, passed, f"{detail}; interpolating spread {spread:.2f} DSC; {minutes:.1f} min")
    assert passed


# -- criterion 5 -------------------------------------------------------------------

def test_criterion_5_resolution_extrapolation(experiments, criterion):
    models = {"vinn": experiments.coronal("vinn_bilinear"), "cnn_star+exSA": experiments.coronal("cnn_star_exsa")}
    table = {res: {name: _mean(_evaluate(m, samples, name)) for name, m in models.items()}
             for res, samples in experiments.extrapolation.items()}
    gap = {res: row["vinn"] - row["cnn_star+exSA"] for res, row in table.items()}
    passed = all(g >= 0 for g in gap.values()) and gap[1.6] > gap[0.8]
    detail = "; ".join(f"{res} mm vinn {row['vinn']:.2f} vs {row['cnn_star+exSA']:.2f} (gap {gap[res]:+.2f})"
                       for res, row in table.items())
    criterion(5, passed, detail)
    assert passed


# -- criterion 6 -------------------------------------------------------------------

def test_criterion_6_hires_loss(experiments, criterion):
    on = _evaluate(experiments.coronal("vinn_bilinear"), experiments.suite, "hires")
    off = _evaluate(experiments.coronal("vinn_no_hires"), experiments.suite, "plain")
    gm_on, gm_off = _mean(on, ids=GM_IDS), _mean(off, ids=GM_IDS)
    sub_on, sub_off = _mean(on, ids=SUB_IDS), _mean(off, ids=SUB_IDS)
    passed = gm_on > gm_off and sub_on >= sub_off - 0.5
    criterion(6, passed, f"GM DSC {gm_on:.2f} with vs {gm_off:.2f} without; "
                         f"subcortical {sub_on:.2f} vs {sub_off:.2f} (slack 0.5)")
    assert passed


# -- criterion 7 -------------------------------------------------------------------

def test_criterion_7_metrics(criterion):
    from vinn.eval import asd, benjamini_hochberg, dsc, wilcoxon

    checks = {}
    y, p = np.array([1, 1, 1, 0, 0], bool), np.array([0, 1, 1, 1, 0], bool)
    checks["hand"] = (dsc(y, p) == 100 * 4 / 6 and asd(y, p) == 1.0 and dsc([0], [0]) == 100.0
                      and asd(y, p, 0.5) == 0.5)
    rng = np.random.default_rng(7)
    asd_err = 0.0
    for _ in range(40):
        shape = tuple(int(k) for k in rng.integers(3, 13, size=3))
        a, b = rng.random(shape) < 0.35, rng.random(shape) < 0.35
        a.flat[0] = b.flat[-1] = True
        v = float(rng.choice([0.7, 1.0, 1.4]))
        asd_err = max(asd_err, abs(asd(a, b, v) - oracles.asd_brute(a, b, v)))
    checks["asd_brute"] = asd_err < 1e-9
    wil_err = 0.0
    for n in range(1, 11):
        for _ in range(8):
            d = rng.integers(-5, 6, size=n)
            r = wilcoxon(d)
            if r.n:
                wil_err = max(wil_err, abs(r.p - oracles.wilcoxon_enumerate(d)[1]))
    checks["wilcoxon"] = wil_err < 1e-12
    bh_err = 0.0
    for triple in ([0.01, 0.04, 0.03], [0.001, 0.02, 0.5], [0.04, 0.04, 0.04], [0.2, 0.01, 0.03]):
        bh_err = max(bh_err, float(np.abs(benjamini_hochberg(triple) - oracles.bh_stepup(triple)).max()))
    checks["bh"] = bh_err < 1e-15
    passed = all(checks.values())
    criterion(7, passed, f"hand {checks['hand']}; ASD vs brute max diff {asd_err:.1e}; "
                         f"Wilcoxon vs 2^n max diff {wil_err:.1e}; BH max diff {bh_err:.1e}")
    assert passed


# -- criterion 8 -------------------------------------------------------------------

def test_criterion_8_desk_training(experiments, criterion):
    ref = experiments.reference
    recs = _evaluate(ref["models"], ref["val"], "reference")
    val_dsc = _mean(recs)
    plane_dsc = {p: r.history[-1]["val_dsc"] for p, r in ref["results"].items()}
    first = [s for s in ref["steps"] if s[0] == "coronal" and s[1] < 2]
    identical = len(first) == len(ref["rerun"]) and all(a == b for a, b in zip(first, ref["rerun"]))
    minutes = ref["seconds"] / 60
    passed = val_dsc > max(90.0, PINNED_VAL_DSC) and minutes < 30 and identical
    per_plane = ", ".join(f"{p} {d:.2f}" for p, d in plane_dsc.items())
    criterion(8, passed, f"3-view validation DSC {val_dsc:.2f} (slices: {per_plane}); {minutes:.1f} min; "
                         f"deterministic rerun of {len(first)} steps {'bit-identical' if identical else 'DIFFERS'}")
    assert passed


# -- criterion 9 -------------------------------------------------------------------

def _laterality_accuracy(seeds=(300, 301, 302), voxels=(0.7, 1.0, 1.4)):
    """Merge GM and subcortical ids, restore, and score components off the midline."""
    correct = total = 0
    for seed in seeds:
        for v in voxels:
            truth = render_labels(PhantomSpec(seed=seed), v).data
            merged = DESK_TABLE.to_merged(truth, only=(10, 11))
            restored = restore_laterality(merged, voxel_mm=v).seg
            for m in (10, 11):
                comp, n = ndimage.label(merged == m)
                centre = (truth.shape[0] - 1) / 2
                for k in range(1, n + 1):
                    sel = comp == k
                    if abs(np.argwhere(sel)[:, 0].mean() - centre) * v < 2.0:
                        continue
                    correct += int((restored[sel] == truth[sel]).sum())
                    total += int(sel.sum())
    return correct, total


def test_criterion_9_pipeline_contracts(experiments, criterion, tmp_path):
    models = experiments.reference["models"]
    dims_ok, dsc_by_res = True, {}
    for v in (0.6, 0.7, 0.8, 0.9, 1.0, 1.4):
        s = make_sample(400, v)
        seg = segment(models, s.image, v)
        dims_ok &= seg.shape == s.image.shape and set(np.unique(seg)) <= set(DESK_TABLE.lateral_ids)
        dsc_by_res[v] = _mean(evaluate_segmentation(s.labels, seg, v, STRUCTURES))
    correct, total = _laterality_accuracy()
    bytes_ok = True
    for plane, m in models.items():
        path = tmp_path / f"{plane}.ckpt"
        save_checkpoint(m.params, m.spec, path, {"plane": plane})
        params, spec, meta = load_checkpoint(path)
        bytes_ok &= encode_checkpoint(params, spec, meta) == path.read_bytes()
    passed = dims_ok and total > 0 and correct == total and bytes_ok
    dsc_txt = ", ".join(f"{v} {d:.1f}" for v, d in dsc_by_res.items())
    criterion(9, passed, f"dims preserved {dims_ok} (DSC by voxel size: {dsc_txt}); laterality "
                         f"{correct}/{total} voxels; checkpoint round trip byte-identical {bytes_ok}")
    assert passed
