import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leafroi.errors import ContractError, DimensionError
from leafroi.metrics import (
    accuracy,
    confusion_matrix,
    mean_iou,
    per_class_pixel_accuracy,
    precision_recall,
)


def brute_iou(pred, gt, k):
    """Set-counting oracle over pixel coordinates."""
    coords = list(itertools.product(*map(range, gt.shape)))
    vals = []
    for c in range(k):
        p = {xy for xy in coords if pred[xy] == c}
        g = {xy for xy in coords if gt[xy] == c}
        vals.append(len(p & g) / len(p | g) if p | g else None)
    return vals


def brute_pixel_acc(pred, gt, k):
    coords = list(itertools.product(*map(range, gt.shape)))
    vals = []
    for c in range(k):
        g = [xy for xy in coords if gt[xy] == c]
        vals.append(sum(pred[xy] == c for xy in g) / len(g) if g else None)
    return vals


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75
    with pytest.raises(ContractError):
        accuracy([], [])


def test_pixel_accuracy_examples():
    gt = np.zeros((2, 2), dtype=int)
    pa = per_class_pixel_accuracy(gt, gt, 3)
    assert pa.values[0] == 1.0 and pa.mean == 1.0
    half = per_class_pixel_accuracy(np.array([[0, 0], [1, 1]]), gt, 3)
    assert half.values[0] == 0.5 and half.mean == 0.5
    assert np.isnan(half.values[1:]).all()


def test_mean_iou_examples():
    m = np.array([[0, 1], [2, 2]])
    assert mean_iou(m, m, 3).mean == 1.0
    disjoint = mean_iou(np.array([[1, 1], [0, 0]]), np.array([[0, 0], [1, 1]]), 2)
    assert disjoint.values.tolist() == [0.0, 0.0]


def test_worked_two_by_two():
    res = mean_iou(np.array([[0, 1], [1, 1]]), np.array([[0, 0], [1, 1]]), 2)
    assert res.values.tolist() == [1 / 2, 2 / 3]
    assert res.mean == pytest.approx(7 / 12, abs=1e-15)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        mean_iou(np.zeros((2, 2)), np.zeros((2, 3)), 3)
    with pytest.raises(DimensionError):
        per_class_pixel_accuracy(np.zeros((2, 2)), np.zeros((3, 2)), 3)


def test_confusion_examples():
    np.testing.assert_array_equal(confusion_matrix([0, 1, 2], [0, 1, 2], 3), np.eye(3, dtype=int))
    cm = confusion_matrix([2], [1], 3)
    assert cm[1, 2] == 1 and cm.sum() == 1
    with pytest.raises(ContractError):
        confusion_matrix([3], [0], 3)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 30))
def test_accuracy_equals_confusion_trace(seed, n):
    rng = np.random.default_rng(seed)
    p, t = rng.integers(0, 3, n), rng.integers(0, 3, n)
    cm = confusion_matrix(p, t, 3)
    assert accuracy(p, t) == np.trace(cm) / n
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(t, minlength=3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_against_brute_force_oracles(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 3, (6, 6)), rng.integers(0, 3, (6, 6))
    for fast, brute in [(mean_iou, brute_iou), (per_class_pixel_accuracy, brute_pixel_acc)]:
        res = fast(pred, gt, 3)
        ref = brute(pred, gt, 3)
        for got, want in zip(res.values, ref):
            assert (np.isnan(got) and want is None) or got == want
        present = [v for v in ref if v is not None]
        assert res.mean == pytest.approx(sum(present) / len(present), abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_iou_bounded_by_precision_and_recall(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 3, (8, 8)), rng.integers(0, 3, (8, 8))
    iou = mean_iou(pred, gt, 3).values
    prec, rec = precision_recall(pred, gt, 3)
    for c in range(3):
        if not np.isnan(iou[c]):
            assert iou[c] <= rec[c] and iou[c] <= prec[c]


def test_permutation_invariance():
    rng = np.random.default_rng(9)
    p, t = rng.integers(0, 3, 50), rng.integers(0, 3, 50)
    perm = rng.permutation(50)
    assert accuracy(p, t) == accuracy(p[perm], t[perm])
    assert mean_iou(p, t, 3).mean == mean_iou(p[perm], t[perm], 3).mean
