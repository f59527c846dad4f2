import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

import oracles
from vinn.data import DESK_TABLE
from vinn.eval import (EvalRecord, asd, benjamini_hochberg, boundary, dsc, evaluate_segmentation,
                       paired_stats, restore_laterality, view_aggregate, wilcoxon)


# -- overlap / surface ----------------------------------------------------------

def test_dsc_hand_examples():
    assert dsc([1, 1, 0, 0], [1, 0, 1, 0]) == 50.0
    assert dsc([0, 0], [0, 0]) == 100.0
    assert dsc([1, 0], [0, 0]) == 0.0
    assert dsc(np.ones((3, 3)), np.ones((3, 3))) == 100.0
    with pytest.raises(ValueError):
        dsc(np.ones(3), np.ones(4))


def test_asd_hand_examples():
    y = np.array([1, 1, 1, 0, 0], bool)
    p = np.array([0, 1, 1, 1, 0], bool)
    assert asd(y, p) == 1.0
    assert asd(y, p, voxel_mm=0.5) == 0.5
    assert asd(y, y) == 0.0
    assert math.isnan(asd(y, np.zeros(5, bool)))
    cube = np.zeros((6, 6, 6), bool)
    cube[1:4, 1:4, 1:4] = True
    assert asd(cube, np.roll(cube, 1, axis=0)) == pytest.approx(oracles.asd_brute(cube, np.roll(cube, 1, axis=0)))


def test_boundary_counts_array_edge_as_background():
    full = np.ones((3, 3, 3), bool)
    b = boundary(full)
    assert b.sum() == 26 and not b[1, 1, 1]
    np.testing.assert_array_equal(np.argwhere(b), oracles.boundary_points(full).astype(int))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.7, 1.0, 1.6]))
def test_asd_matches_brute_force(seed, v):
    rng = np.random.default_rng(seed)
    shape = tuple(int(k) for k in rng.integers(3, 13, size=3))
    y = rng.random(shape) < 0.4
    p = rng.random(shape) < 0.4
    y.flat[0] = p.flat[-1] = True
    assert asd(y, p, v) == pytest.approx(oracles.asd_brute(y, p, v), rel=1e-9)


def test_evaluate_segmentation_flags():
    gt = np.zeros((4, 4, 4), int)
    gt[:2] = 2
    pred = gt.copy()
    pred[0, 0, 0] = 3
    recs = evaluate_segmentation(gt, pred, 1.0, (2, 3, 4), subject="s", model="m")
    assert [r.structure for r in recs] == [2, 3, 4]
    assert recs[0].dsc == pytest.approx(100 * 2 * 31 / 63)
    assert recs[1].flags == ("asd_undefined", "absent_gt")
    assert recs[2].flags == ("asd_undefined", "absent_gt", "absent_pred") and recs[2].dsc == 100
    with pytest.raises(ValueError):
        EvalRecord("s", "m", 1, 101.0, 0.0)
    with pytest.raises(ValueError):
        EvalRecord("s", "m", 1, 50.0, -1.0)


# -- statistics --------------------------------------------------------------------

def test_wilcoxon_known_values():
    r = wilcoxon(np.arange(1, 11))
    assert (r.w, r.n, r.method) == (55.0, 10, "exact")
    assert r.p == 2 / 1024
    assert wilcoxon([0, 0, 0]).method == "degenerate" and wilcoxon([0, 0]).p == 1.0
    sym = wilcoxon([-1, 1, -2, 2])
    assert sym.p == 1.0


@settings(max_examples=120, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=1, max_size=10))
def test_wilcoxon_exact_matches_enumeration(d):
    r = wilcoxon(d)
    w, p = oracles.wilcoxon_enumerate(d)
    if r.n == 0:
        assert r.method == "degenerate"
        return
    assert r.w == pytest.approx(w)
    assert r.p == pytest.approx(p, rel=1e-12)


def test_wilcoxon_normal_matches_scipy():
    rng = np.random.default_rng(4)
    d = rng.normal(0.3, 1.0, size=40)
    r = wilcoxon(d)
    ref = scipy.stats.wilcoxon(d, method="approx", correction=False)
    assert r.method == "normal"
    assert r.p == pytest.approx(ref.pvalue, rel=1e-9)
    ex = scipy.stats.wilcoxon(d[:15], method="exact")
    assert wilcoxon(d[:15]).p == pytest.approx(ex.pvalue, rel=1e-9)


def test_bh_hand_example():
    np.testing.assert_allclose(benjamini_hochberg([0.01, 0.04, 0.03, 0.02]), [0.04] * 4)
    np.testing.assert_allclose(benjamini_hochberg([0.5, 0.01]), [0.5, 0.02])
    assert benjamini_hochberg([]).size == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=15))
def test_bh_matches_step_up(p):
    adj = benjamini_hochberg(p)
    np.testing.assert_allclose(adj, oracles.bh_stepup(p), rtol=1e-12)
    assert np.all(adj >= np.asarray(p) - 1e-15) and np.all(adj <= 1)


def _records(model, values, structures=(2, 3)):
    return [EvalRecord(f"s{i}", model, s, v, 0.0) for s in structures for i, v in enumerate(values)]


def test_paired_stats_rows_and_errors():
    a = _records("a", [90, 91, 92, 93, 94, 95])
    b = _records("b", [89, 89, 90, 90, 91, 91])
    rows = paired_stats(a, b)
    assert [r.structure for r in rows] == [2, 3]
    assert rows[0].p_raw == pytest.approx(2 / 64)
    assert rows[0].p_bh == pytest.approx(2 / 64) and rows[0].median_diff > 0
    with pytest.raises(ValueError, match="duplicate"):
        paired_stats(a + a[:1], b)
    with pytest.raises(ValueError, match="structures differ"):
        paired_stats(a, _records("b", [1] * 6, structures=(2,)))
    with pytest.raises(ValueError, match="unpaired"):
        paired_stats(a, b[1:])
    with pytest.raises(ValueError, match="need at least"):
        paired_stats(_records("a", [1, 2]), _records("b", [2, 3]))


# -- view aggregation / laterality --------------------------------------------------

def _random_views(rng, shape=(3, 4, 5)):
    out_view, sag_view = DESK_TABLE.view("coronal"), DESK_TABLE.view("sagittal")
    ax = rng.dirichlet(np.ones(out_view.num_classes), size=shape).transpose(3, 0, 1, 2)
    co = rng.dirichlet(np.ones(out_view.num_classes), size=shape).transpose(3, 0, 1, 2)
    sa = rng.dirichlet(np.ones(sag_view.num_classes), size=shape).transpose(3, 0, 1, 2)
    return ax, co, sa


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.1, 10.0))
def test_view_aggregate_scale_invariant(seed, c):
    ax, co, sa = _random_views(np.random.default_rng(seed))
    base = view_aggregate(ax, co, sa)
    np.testing.assert_array_equal(view_aggregate(c * ax, c * co, c * sa), base)
    assert set(np.unique(base)) <= set(DESK_TABLE.lateral_ids)


def test_view_aggregate_weights_and_broadcast():
    ax = np.zeros((9, 1, 1, 1))
    co = np.zeros((9, 1, 1, 1))
    sa = np.zeros((6, 1, 1, 1))
    ax[2] = 1.0   # left wm
    co[4] = 1.0   # left gm
    sa[DESK_TABLE.sagittal_ids.index(10)] = 1.0  # merged gm backs the coronal vote
    assert view_aggregate(ax, co, sa).item() == 4
    assert view_aggregate(ax, co, np.zeros_like(sa)).item() == 2  # tie goes to the lower class
    assert view_aggregate(ax, co, sa, weights={"sagittal": 0.0}).item() == 2
    with pytest.raises(ValueError):
        view_aggregate(ax, co[:8], sa)
    with pytest.raises(ValueError):
        view_aggregate(ax, co, sa[:5])


def test_restore_laterality():
    seg = np.zeros((20, 6, 6), np.int16)
    seg[2:6] = 2          # left wm
    seg[14:18] = 3        # right wm
    seg[0:2] = 10         # merged gm, left side
    seg[18:20] = 10       # merged gm, right side
    seg[9:11, 2:4, 2:4] = 11  # merged subcortical, equidistant
    res = restore_laterality(seg)
    assert res.assigned == 3 and res.unresolved == []
    assert np.all(res.seg[0:2] == 4) and np.all(res.seg[18:20] == 5)
    assert np.all(res.seg[9:11, 2:4, 2:4] == 6)
    assert not np.isin(res.seg, DESK_TABLE.merged_ids).any()
    lonely = np.zeros((5, 5, 5), np.int16)
    lonely[1] = 10
    lonely[3] = 2
    out = restore_laterality(lonely)
    assert out.unresolved == [(10, 25)] and np.all(out.seg[1] == 10)
