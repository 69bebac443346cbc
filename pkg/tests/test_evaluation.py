import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from agripipe.errors import DimensionMismatch, EmptyMatrix
from agripipe.evaluation import compute_metrics, confusion

masks = hnp.arrays(np.uint8, (12, 12), elements=st.integers(0, 2))


def _assert_matches_oracle(report, expect):
    for key in ("accuracy", "mean_precision", "mean_f1", "miou", "mdc"):
        assert getattr(report, key) == pytest.approx(expect[key], abs=1e-12)
    for key in ("precision", "recall", "f1", "iou", "dice"):
        np.testing.assert_allclose(getattr(report, key), expect[key], rtol=0, atol=1e-12)


def test_perfect_prediction():
    gt = np.random.default_rng(0).integers(0, 3, (64, 64))
    cm = confusion(gt, gt)
    assert np.array_equal(cm, np.diag(np.bincount(gt.ravel(), minlength=3)))
    r = compute_metrics(cm)
    assert r.accuracy == r.mean_f1 == r.miou == r.mdc == 1.0


def test_all_wrong_single_cell():
    cm = confusion(np.zeros((8, 8), int), np.full((8, 8), 2))
    expect = np.zeros((3, 3), int)
    expect[0, 2] = 64
    assert np.array_equal(cm, expect)


def test_half_crop_half_weed_all_crop():
    gt = np.ones((4, 4), int)
    gt[:, 2:] = 2
    r = compute_metrics(confusion(gt, np.ones((4, 4), int)))
    assert r.iou[1] == 0.5 and r.iou[2] == 0.0
    assert r.present == (False, True, True)
    assert r.miou == 0.25
    assert r.accuracy == 0.5


def test_mask_selects_pixels():
    gt = np.array([[0, 1], [2, 1]])
    pred = np.array([[0, 2], [2, 0]])
    valid = np.array([[True, False], [True, True]])
    assert np.array_equal(confusion(gt, pred, valid), oracles.confusion_loop(gt, pred, valid))
    assert compute_metrics(confusion(gt, pred, valid)).evaluated_pixels == 3


def test_errors():
    with pytest.raises(DimensionMismatch):
        confusion(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(DimensionMismatch):
        confusion(np.zeros((3, 3)), np.zeros((3, 3)), np.ones((2, 2), bool))
    with pytest.raises(EmptyMatrix):
        compute_metrics(np.zeros((3, 3), int))


def test_random_pairs_against_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        gt, pred = rng.integers(0, 3, (2, 64, 64))
        cm = confusion(gt, pred)
        assert np.array_equal(cm, oracles.confusion_loop(gt, pred))
        _assert_matches_oracle(compute_metrics(cm), oracles.metrics_loop(cm.tolist()))


@settings(max_examples=100, deadline=None)
@given(gt=masks, pred=masks)
def test_metric_properties(gt, pred):
    cm = confusion(gt, pred)
    r = compute_metrics(cm)
    _assert_matches_oracle(r, oracles.metrics_loop(cm.tolist()))
    for c in range(3):
        if r.present[c]:
            assert r.dice[c] == pytest.approx(2 * r.iou[c] / (1 + r.iou[c]), abs=1e-9)
    values = [r.accuracy, r.mean_precision, r.mean_f1, r.miou, r.mdc, *r.f1, *r.iou, *r.dice]
    assert all(0 <= v <= 1 for v in values)


@settings(max_examples=50, deadline=None)
@given(gt=masks, pred=masks, perm=st.permutations([0, 1, 2]), data=st.data())
def test_invariances(gt, pred, perm, data):
    base = compute_metrics(confusion(gt, pred))
    order = data.draw(st.permutations(range(gt.size)))
    shuffled = compute_metrics(confusion(gt.ravel()[order], pred.ravel()[order]))
    assert shuffled == base
    relabel = np.array(perm)
    assert compute_metrics(confusion(relabel[gt], relabel[pred])).accuracy == base.accuracy


def test_report_formats():
    r = compute_metrics(np.array([[5, 1, 0], [0, 3, 1], [0, 0, 2]]))
    record = r.record()
    assert "\n" not in record
    pairs = dict(item.split("=") for item in record.split())
    assert float(pairs["accuracy"]) == pytest.approx(10 / 12, abs=1e-6)
    assert pairs["evaluated_pixels"] == "12"
    assert "weed.iou" in pairs
    table = r.table()
    assert table.splitlines()[0].split() == ["class", "precision", "recall", "F1", "IOU", "Dice"]
    assert "mIOU" in table
