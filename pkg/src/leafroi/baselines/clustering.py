"""Color-distance lesion detection with hand-crafted region features.

Pixels closer than a threshold to the mean lesion color form the detected
region.  RGB and LBP histograms are then taken from that region and from
its complement, and a linear classifier is trained on them.
"""

from __future__ import annotations

import logging

import numpy as np

from ..data import SPOT
from ..errors import ContractError, DataError

logger = logging.getLogger(__name__)

RGB_BINS = 16
LBP_BINS = 256
MIN_REGION = 32
FEATURE_DIM = 2 * (3 * RGB_BINS + LBP_BINS)

# neighbor offsets, clockwise from top-left; bit k of the code is neighbor k
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def mean_disease_color(images, masks) -> np.ndarray:
    """Mean RGB over every pixel labeled as lesion in the given masks."""
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks)
    if images.ndim == 3:
        images, masks = images[None], masks[None]
    sel = masks == SPOT
    n = int(sel.sum())
    if n == 0:
        raise DataError("no lesion pixels in the training masks")
    pix = images.transpose(1, 0, 2, 3)[:, sel]
    return pix.sum(axis=1) / n


def cluster_segment(image, disease_color, threshold: float) -> np.ndarray:
    """Pixels whose Euclidean RGB distance to ``disease_color`` is below ``threshold``."""
    if threshold <= 0:
        raise ContractError(f"threshold must be positive, got {threshold}")
    image = np.asarray(image, dtype=np.float64)
    diff = image - np.asarray(disease_color, dtype=np.float64)[:, None, None]
    return np.sqrt((diff ** 2).sum(axis=0)) < threshold


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """Basic 8-neighbor local binary pattern; borders replicate the edge."""
    padded = np.pad(gray, 1, mode="edge")
    h, w = gray.shape
    codes = np.zeros((h, w), dtype=np.int64)
    for bit, (dy, dx) in enumerate(_NEIGHBORS):
        nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        codes |= (nb >= gray).astype(np.int64) << bit
    return codes


def _l1(hist: np.ndarray) -> np.ndarray:
    s = hist.sum()
    return hist / s if s > 0 else hist


def _block(image: np.ndarray, codes: np.ndarray, region: np.ndarray) -> np.ndarray:
    if region.sum() < MIN_REGION:
        region = np.ones_like(region)
    parts = []
    for ch in range(3):
        vals = image[ch][region]
        idx = np.minimum((vals * RGB_BINS).astype(np.int64), RGB_BINS - 1)
        parts.append(_l1(np.bincount(idx, minlength=RGB_BINS).astype(np.float64)))
    parts.append(_l1(np.bincount(codes[region], minlength=LBP_BINS).astype(np.float64)))
    return np.concatenate(parts)


def region_features(image, region) -> np.ndarray:
    """RGB + LBP histograms of the region, then of its complement (608 values)."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    region = np.asarray(region, dtype=bool)
    codes = lbp_codes(image.mean(axis=0))
    return np.concatenate([_block(image, codes, region), _block(image, codes, ~region)])


def default_thresholds(n: int = 16) -> np.ndarray:
    return np.geomspace(0.02, 0.5, n)
