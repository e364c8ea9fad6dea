"""Classification and segmentation metrics on integer counts.

Segmentation metrics accept masks of any shape (a single ``H x W`` mask or a
stack of them); counts are accumulated over every pixel and divided once.
Classes absent from the ground truth (or, for IoU, from both masks) are
left out of the mean and reported as NaN.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractError, DimensionError


class PerClass(NamedTuple):
    values: np.ndarray  # one entry per class, NaN where undefined
    mean: float


def _labels(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype.kind not in "iub":
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ContractError(f"{name} must hold integer labels")
    return arr.astype(np.int64)


def accuracy(pred_labels, true_labels) -> float:
    """Fraction of correctly classified items."""
    p, t = _labels(pred_labels, "predictions").ravel(), _labels(true_labels, "labels").ravel()
    if p.shape != t.shape:
        raise DimensionError(f"{p.size} predictions but {t.size} labels")
    if t.size == 0:
        raise ContractError("accuracy of an empty set is undefined")
    return int((p == t).sum()) / t.size


def confusion_matrix(pred_labels, true_labels, k: int) -> np.ndarray:
    """``k x k`` counts; entry ``(i, j)`` is the number of true ``i`` predicted ``j``."""
    p, t = _labels(pred_labels, "predictions").ravel(), _labels(true_labels, "labels").ravel()
    if p.shape != t.shape:
        raise DimensionError(f"{p.size} predictions but {t.size} labels")
    for arr in (p, t):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ContractError(f"labels must lie in [0, {k}), got [{arr.min()}, {arr.max()}]")
    return np.bincount(t * k + p, minlength=k * k).reshape(k, k)


def _pixel_confusion(pred, gt, k: int) -> np.ndarray:
    pred, gt = _labels(pred, "prediction mask"), _labels(gt, "ground-truth mask")
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return confusion_matrix(pred, gt, k)


def _per_class(num: np.ndarray, den: np.ndarray) -> PerClass:
    vals = np.full(len(num), np.nan)
    ok = den > 0
    vals[ok] = num[ok] / den[ok]
    return PerClass(vals, float(vals[ok].mean()) if ok.any() else float("nan"))


def per_class_pixel_accuracy(pred, gt, k: int) -> PerClass:
    """Recall of each class over pixels: ``|gt=c and pred=c| / |gt=c|``."""
    cm = _pixel_confusion(pred, gt, k)
    return _per_class(np.diag(cm), cm.sum(axis=1))


def mean_iou(pred, gt, k: int) -> PerClass:
    """Jaccard index per class and its mean over classes with non-empty union."""
    cm = _pixel_confusion(pred, gt, k)
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    return _per_class(inter, union)


def precision_recall(pred, gt, k: int) -> tuple[np.ndarray, np.ndarray]:
    cm = _pixel_confusion(pred, gt, k)
    tp = np.diag(cm)
    return _per_class(tp, cm.sum(axis=0)).values, _per_class(tp, cm.sum(axis=1)).values
