"""Small image utilities shared by the generator and feature extractors."""

from __future__ import annotations

import numpy as np


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers, edge-clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize over the last two axes."""
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    lo, hi, fr = _axis_weights(h, out_h)
    rows = img[..., lo, :] * (1 - fr)[:, None] + img[..., hi, :] * fr[:, None]
    lo, hi, fr = _axis_weights(w, out_w)
    return rows[..., lo] * (1 - fr) + rows[..., hi] * fr


def value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth noise in [0, 1]: a random ``cells`` grid upsampled bilinearly."""
    grid = rng.random((cells + 1, cells + 1))
    return resize_bilinear(grid, size, size)


def montage(images, gap: int = 2) -> np.ndarray:
    """Place ``3 x H x W`` images side by side with a white gap."""
    h = max(im.shape[1] for im in images)
    parts = []
    for i, im in enumerate(images):
        if i:
            parts.append(np.ones((3, h, gap)))
        pad = np.ones((3, h, im.shape[2]))
        pad[:, :im.shape[1]] = im
        parts.append(pad)
    return np.concatenate(parts, axis=2)


ROI_COLORS = np.array([[0.0, 0.0, 0.0], [0.2, 0.75, 0.2], [0.85, 0.2, 0.1]])


def colorize_mask(mask: np.ndarray) -> np.ndarray:
    """Render a {0,1,2} label mask as an RGB image (black, green, red)."""
    return ROI_COLORS[np.asarray(mask, dtype=np.int64)].transpose(2, 0, 1)
