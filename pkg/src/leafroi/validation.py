"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .errors import DataError, DimensionError


def check_images(X, channels: int = 3) -> np.ndarray:
    """Return ``X`` as a finite float64 ``N x C x H x W`` array with square extents."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != channels:
        raise DimensionError(f"expected images of shape N x {channels} x H x W, got {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise DimensionError(f"images must be square, got {X.shape[2]} x {X.shape[3]}")
    if len(X) == 0:
        raise DataError("no images given")
    if not np.isfinite(X).all():
        raise DataError("images contain non-finite values")
    return X


def check_masks(masks, images: np.ndarray, n_classes: int = 3) -> np.ndarray:
    """Integer label masks matching the images' batch and spatial extents."""
    m = np.asarray(masks)
    if m.ndim == 2:
        m = m[None]
    if m.shape != (images.shape[0],) + images.shape[2:]:
        raise DimensionError(f"masks of shape {m.shape} do not match images {images.shape}")
    if not np.issubdtype(m.dtype, np.integer):
        if not np.all(m == np.round(m)):
            raise DataError("mask values must be integers")
    m = m.astype(np.int64)
    if m.min() < 0 or m.max() >= n_classes:
        raise DataError(f"mask values must lie in [0, {n_classes}), found [{m.min()}, {m.max()}]")
    return m.astype(np.uint8)


def check_labels(y, n: int, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise DataError("class labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0 or (n_classes is not None and y.max() >= n_classes):
        raise DataError(f"class labels out of range: [{y.min()}, {y.max()}]")
    return y


def check_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-d feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise DataError("features contain non-finite values")
    return X


def check_descriptor_sets(sets, dim: int | None = None) -> list[np.ndarray]:
    """A list of ``M_i x D`` descriptor arrays (one per image)."""
    if isinstance(sets, np.ndarray) and sets.ndim == 2:
        sets = [sets]
    out = [check_matrix(s, dim) for s in sets]
    if not out:
        raise DataError("no descriptor sets given")
    d = out[0].shape[1]
    if any(s.shape[1] != d for s in out):
        raise DimensionError("descriptor sets have different dimensions")
    return out


def check_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
