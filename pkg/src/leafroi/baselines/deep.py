"""Convolutional descriptors from a trained classifier, and bilinear pooling."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ConfigurationError, DataError, DimensionError
from ..imaging import resize_bilinear
from ..networks import Network
from ..training import center, roi_probabilities
from .fisher import power_l2_normalize

logger = logging.getLogger(__name__)

DEFAULT_TAP = "pool3"
DEFAULT_SCALES = tuple(2.0 ** (i / 4) for i in range(-4, 5))


def tap_stride(net: Network, tap_layer: str) -> int:
    """Number of pooling halvings between the input and ``tap_layer``, as a stride."""
    stride = 1
    for ly in net.spec.layers:
        if ly.kind == "maxpool":
            stride *= 2
        if ly.name == tap_layer:
            return stride
    raise ConfigurationError(f"no layer named {tap_layer!r}")


def tap_maps(images, net: Network, tap_layer: str = DEFAULT_TAP, roi: Network | None = None,
             chunk: int = 16) -> np.ndarray:
    """Activations of ``tap_layer`` for a stack of ``N x 3 x H x W`` images."""
    images = np.asarray(images, dtype=np.float64)
    kind = net.spec.layer(tap_layer).kind
    if kind not in ("relu", "maxpool"):
        raise ConfigurationError(f"tap layer {tap_layer!r} is a {kind} layer, not a rectified map")
    out = []
    for s in range(0, len(images), chunk):
        batch = images[s:s + chunk]
        x = center(batch)
        if net.spec.in_channels == 6:
            if roi is None:
                raise ConfigurationError("a 6-channel classifier needs its ROI subnet for features")
            x = np.concatenate([x, roi_probabilities(roi, batch)], axis=1)
        out.append(net.forward(x, until=tap_layer).data)
    return np.concatenate(out)


def extract_deep_features(image, cls_net: Network, tap_layer: str = DEFAULT_TAP,
                          scales=DEFAULT_SCALES, roi: Network | None = None) -> np.ndarray:
    """Descriptors (one per tap location, all scales pooled) of shape ``M x C``.

    Each scale resizes the image bilinearly to the nearest extent the tap
    stride divides; scales too small to leave a 2 x 2 tap map are skipped.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected a 3 x H x W image, got {image.shape}")
    if len(scales) == 0:
        raise DataError("no scales given")
    stride = tap_stride(cls_net, tap_layer)
    h, w = image.shape[1:]
    sets = []
    for s in scales:
        th = int(round(h * s / stride)) * stride
        tw = int(round(w * s / stride)) * stride
        if th < 2 * stride or tw < 2 * stride:
            logger.warning("scale %.3f gives %dx%d input, below the %d-pixel minimum; skipped",
                           s, th, tw, 2 * stride)
            continue
        resized = resize_bilinear(image, th, tw)
        fmap = tap_maps(resized[None], cls_net, tap_layer, roi)[0]
        sets.append(fmap.reshape(fmap.shape[0], -1).T)
    if not sets:
        raise DataError("every scale was below the receptive minimum")
    return np.concatenate(sets)


def bilinear_pool(feat_a, feat_b, normalize: bool = True) -> np.ndarray:
    """Sum over locations of ``outer(a_l, b_l)``, flattened row-major.

    Locations are accumulated one at a time in raster order.  With
    ``normalize`` the result gets signed square root and L2 normalization
    (skipped for an all-zero vector).
    """
    a = np.asarray(feat_a, dtype=np.float64)
    b = np.asarray(feat_b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"bilinear pooling needs equal spatial extents, got {a.shape} and {b.shape}")
    fa = a.reshape(a.shape[0], -1)
    fb = b.reshape(b.shape[0], -1)
    acc = np.zeros((fa.shape[0], fb.shape[0]))
    for loc in range(fa.shape[1]):
        acc += np.outer(fa[:, loc], fb[:, loc])
    v = acc.ravel()
    return power_l2_normalize(v) if normalize else v
