from __future__ import annotations

import itertools

import numpy as np
import pytest

from instlift import metrics
from instlift.errors import ShapeMismatch


def brute_pq(pred, gt):
    """PQ straight from the definition: loop over every (pred, gt) segment pair."""
    p = np.concatenate([np.ravel(x) for x in pred])
    g = np.concatenate([np.ravel(x) for x in gt])
    ps = [int(x) for x in np.unique(p) if x != 0]
    gs = [int(x) for x in np.unique(g) if x != 0]
    ious = []
    for a, b in itertools.product(ps, gs):
        inter = np.sum((p == a) & (g == b))
        union = np.sum((p == a) | (g == b))
        if union and inter / union > 0.5:
            ious.append(inter / union)
    tp = len(ious)
    fp, fn = len(ps) - tp, len(gs) - tp
    denom = tp + fp / 2 + fn / 2
    return (sum(ious) / denom if denom else 0.0), tp, fp, fn


def test_identical_up_to_relabeling():
    gt = [np.array([[1, 1, 2], [0, 3, 3]]), np.array([[3, 0, 2], [1, 1, 1]])]
    lut = np.array([0, 7, 4, 9])
    r = metrics.scene_pq([lut[g] for g in gt], gt)
    assert (r.pq, r.fp, r.fn, r.tp) == (1.0, 0, 0, 3)


def test_all_background_prediction():
    gt = [np.array([[1, 2], [3, 0]])]
    r = metrics.scene_pq([np.zeros((2, 2), int)], gt)
    assert (r.pq, r.tp, r.fn, r.miou_tp) == (0.0, 0, 3, 0.0)


def test_hand_built_case():
    gt = [np.array([[1, 1, 2, 2], [1, 1, 2, 2], [0, 0, 3, 3], [0, 0, 3, 3]]),
          np.array([[1, 1, 0, 0], [1, 0, 0, 0], [2, 2, 2, 0], [3, 3, 3, 3]])]
    pred = [np.array([[5, 5, 5, 6], [5, 5, 6, 6], [0, 0, 6, 6], [0, 4, 4, 4]]),
            np.array([[5, 5, 5, 0], [5, 0, 0, 0], [6, 6, 0, 0], [4, 4, 4, 0]])]
    r = metrics.scene_pq(pred, gt)
    want = brute_pq(pred, gt)
    assert r.pq == pytest.approx(want[0], abs=1e-12) and (r.tp, r.fp, r.fn) == want[1:]


def test_random_cases_against_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        shape = tuple(rng.integers(2, 7, size=2))
        gt = [rng.integers(0, 4, size=shape) for _ in range(n)]
        pred = [np.where(rng.random(shape) < 0.7, g * 3, rng.integers(0, 6, size=shape)) for g in gt]
        r = metrics.scene_pq(pred, gt)
        want = brute_pq(pred, gt)
        assert r.pq == pytest.approx(want[0], abs=1e-12)
        assert (r.tp, r.fp, r.fn) == want[1:]


def test_relabel_invariance():
    rng = np.random.default_rng(5)
    gt = [rng.integers(0, 5, size=(6, 6)) for _ in range(3)]
    pred = [rng.integers(0, 5, size=(6, 6)) for _ in range(3)]
    base = metrics.scene_pq(pred, gt)
    lut = np.concatenate([[0], rng.permutation(np.arange(10, 14))])
    again = metrics.scene_pq([lut[p] for p in pred], gt)
    assert again.pq == base.pq and (again.tp, again.fp, again.fn) == (base.tp, base.fp, base.fn)


def test_matched_miou():
    gt = [np.arange(1, 6).reshape(1, 5)]
    assert metrics.matched_miou(gt, gt) == (1.0, 5, 5)
    assert metrics.matched_miou([np.zeros((1, 5), int)], gt) == (0.0, 0, 5)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        metrics.scene_pq([np.zeros((2, 2))], [np.zeros((2, 3))])
    with pytest.raises(ShapeMismatch):
        metrics.scene_pq([np.zeros((2, 2))], [])


def test_report_text_round_trip(tmp_path):
    gt = [np.array([[1, 1, 2, 0]])]
    r = metrics.scene_pq([np.array([[3, 3, 0, 0]])], gt)
    metrics.write_report(tmp_path / "m.txt", r, {"scene": "x"})
    back = metrics.parse_report((tmp_path / "m.txt").read_text())
    assert back["scene"] == "x" and float(back["pq"]) == pytest.approx(r.pq, abs=1e-6)
    assert back["match"] == [(3, 1, 1.0)]
