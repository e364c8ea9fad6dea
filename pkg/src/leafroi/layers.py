"""Differentiable layers on top of :mod:`leafroi.tensor`.

Every layer is a plain function taking and returning :class:`Tensor`
objects; the backward rule is registered on the active tape.  Images and
feature maps are ``N x C x H x W``.

Convolution is cross-correlation (the kernel is not flipped).  Transposed
convolution uses the same kernel array as the adjoint operator, so
``<conv2d(x, K), y> == <x, tconv2d(y, K)>`` holds for zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor, add, make_result, reshape

LOG_FLOOR = 1e-12


@dataclass
class ConvParams:
    kernel: Tensor  # out_ch x in_ch x kh x kw
    bias: Tensor  # out_ch
    stride: int = 1
    padding: int = 0


@dataclass
class TConvParams:
    kernel: Tensor  # in_ch x out_ch x kh x kw
    stride: int = 1


# ---------------------------------------------------------------------------
# initializers


def he_normal(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def bilinear_kernel(in_ch: int, out_ch: int, k: int) -> np.ndarray:
    """Upsampling kernel that interpolates each channel independently."""
    factor = (k + 1) // 2
    center = factor - 1 if k % 2 == 1 else factor - 0.5
    og = 1.0 - np.abs(np.arange(k) - center) / factor
    filt = np.outer(og, og)
    w = np.zeros((in_ch, out_ch, k, k))
    for c in range(min(in_ch, out_ch)):
        w[c, c] = filt
    return w


# ---------------------------------------------------------------------------
# im2col helpers
#
# Columns are kept channel-major, ``(C * kh * kw) x (N * Ho * Wo)``, and maps
# are handled as ``C x N x H x W`` inside the kernels; every copy in the
# gather/scatter loops is then over contiguous rows.


def _im2col(xt: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c, n = xt.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * (ho - 1) + 1:stride,
                               j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im(cols: np.ndarray, out: np.ndarray, stride: int) -> np.ndarray:
    """Accumulate ``C x kh x kw x N x Ho x Wo`` columns onto ``out`` (``C x N x H x W``)."""
    _, kh, kw, _, ho, wo = cols.shape
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += cols[:, i, j]
    return out


def _to_cnhw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3))


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"convolution of extent {size} with kernel {k}, stride {stride}, "
            f"padding {pad} has non-integral output extent")
    return span // stride + 1


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation plus per-channel bias."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects N x C x H x W input, got {x.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = p.kernel.shape
    if c != ci:
        raise DimensionError(f"conv2d input has {c} channels, kernel expects {ci}")
    if p.bias.shape != (o,):
        raise DimensionError(f"conv2d bias shape {p.bias.shape} does not match {o} outputs")
    s, pad = p.stride, p.padding
    ho = conv_output_extent(h, kh, s, pad)
    wo = conv_output_extent(w, kw, s, pad)

    xt = _to_cnhw(x.data)
    if pad:
        xt = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xt, kh, kw, s, ho, wo)
    wm = p.kernel.data.reshape(o, c * kh * kw)
    out = wm @ cols
    out += p.bias.data[:, None]
    out = _to_cnhw(out.reshape(o, n, ho, wo))

    def back(g):
        gm = _to_cnhw(g).reshape(o, n * ho * wo)
        dk = (gm @ cols.T).reshape(p.kernel.shape) if p.kernel.requires_grad else None
        db = gm.sum(axis=1) if p.bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (wm.T @ gm).reshape(c, kh, kw, n, ho, wo)
            dxt = _col2im(dcols, np.zeros(xt.shape), s)
            if pad:
                dxt = dxt[:, :, pad:pad + h, pad:pad + w]
            dx = _to_cnhw(dxt)
        return dx, dk, db

    return make_result("conv2d", out, (x, p.kernel, p.bias), back)


def tconv2d(x: Tensor, p: TConvParams) -> Tensor:
    """Transposed convolution; output extent ``(H - 1) * stride + k``."""
    if x.ndim != 4:
        raise DimensionError(f"tconv2d expects N x C x H x W input, got {x.shape}")
    n, c, h, w = x.shape
    ci, o, kh, kw = p.kernel.shape
    if c != ci:
        raise DimensionError(f"tconv2d input has {c} channels, kernel expects {ci}")
    s = p.stride
    ho, wo = (h - 1) * s + kh, (w - 1) * s + kw

    xm = _to_cnhw(x.data).reshape(c, n * h * w)
    km = p.kernel.data.reshape(c, o * kh * kw)
    cols = (km.T @ xm).reshape(o, kh, kw, n, h, w)
    out = _to_cnhw(_col2im(cols, np.zeros((o, n, ho, wo)), s))

    def back(g):
        gcols = _im2col(_to_cnhw(g), kh, kw, s, h, w)
        dk = (xm @ gcols.T).reshape(p.kernel.shape) if p.kernel.requires_grad else None
        dx = None
        if x.requires_grad:
            dx = _to_cnhw((km @ gcols).reshape(c, n, h, w))
        return dx, dk

    return make_result("tconv2d", out, (x, p.kernel), back)


def crop(x: Tensor, ref, offset: tuple[int, int] | None = None) -> Tensor:
    """Cut the spatial window of ``ref``'s extent out of ``x``.

    ``ref`` may be a tensor or an ``(h, w)`` pair.  The offset defaults to
    the centered position.
    """
    h, w = (ref.shape[-2:] if isinstance(ref, Tensor) else tuple(ref))
    big_h, big_w = x.shape[-2:]
    if h > big_h or w > big_w:
        raise DimensionError(f"crop reference {h}x{w} exceeds input {big_h}x{big_w}")
    if offset is None:
        offset = ((big_h - h) // 2, (big_w - w) // 2)
    r, q = offset
    if r < 0 or q < 0 or r + h > big_h or q + w > big_w:
        raise DimensionError(f"crop window {h}x{w} at {offset} exceeds input {big_h}x{big_w}")
    out = np.ascontiguousarray(x.data[:, :, r:r + h, q:q + w])
    shape = x.shape

    def back(g):
        dx = np.zeros(shape)
        dx[:, :, r:r + h, q:q + w] = g
        return (dx,)

    return make_result("crop", out, (x,), back)


add_elementwise = add


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise DimensionError(f"concat_channels expects 4-d maps, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat_channels batch/spatial mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_result("concat_channels", out, (a, b),
                       lambda g: (g[:, :ca].copy(), g[:, ca:].copy()))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2.  Ties go to the first maximum in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def back(g):
        routed = (np.arange(4) == idx[..., None]) * g[..., None]
        dx = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(n, c, h, w),)

    return make_result("maxpool2", out, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped ``in x out``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"fully_connected shapes {x.shape} and {weight.shape} mismatch")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"fully_connected bias {bias.shape} vs {weight.shape[1]} outputs")
    X, W = x.data, weight.data
    out = X @ W + bias.data
    return make_result("fully_connected", out, (x, weight, bias),
                       lambda g: (g @ W.T, X.T @ g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# softmax and losses


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    if logits.shape[axis] < 2:
        raise ContractError(f"softmax needs at least 2 classes, got {logits.shape[axis]}")
    p = _softmax(logits.data, axis)

    def back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", p, (logits,), back)


def pixel_softmax(scores: Tensor) -> Tensor:
    """Softmax over the channel axis of an ``N x K x H x W`` score map."""
    return softmax(scores, axis=1)


def _check_labels(labels: np.ndarray, k: int):
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k}), got range "
                            f"[{labels.min()}, {labels.max()}]")


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``probs`` (N x K)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = probs.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{n} predictions but {labels.shape[0]} labels")
    _check_labels(labels, k)
    rows = np.arange(n)
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, LOG_FLOOR)
    loss = -np.log(clamped).mean()

    def back(g):
        dp = np.zeros_like(probs.data)
        live = picked > LOG_FLOOR
        dp[rows[live], labels[live]] = -float(g) / (n * picked[live])
        return (dp,)

    return make_result("cross_entropy", np.array(loss), (probs,), back)


def class_weights_from_masks(masks, k: int, mode: str = "inverse") -> np.ndarray:
    """Per-class pixel-loss weights from label frequencies.

    ``inverse`` gives ``total / (k * count_c)``; ``sqrt`` its square root;
    ``none`` all ones.  Classes that never occur get weight zero.
    """
    if mode == "none":
        return np.ones(k)
    counts = np.zeros(k, dtype=np.int64)
    for m in masks:
        counts += np.bincount(np.asarray(m, dtype=np.int64).ravel(), minlength=k)[:k]
    total = counts.sum()
    weights = np.zeros(k)
    present = counts > 0
    weights[present] = total / (k * counts[present])
    if mode == "sqrt":
        weights = np.sqrt(weights)
    elif mode != "inverse":
        raise ConfigurationError(f"unknown class-weight mode {mode!r}")
    return weights


def pixel_softmax_loss(scores: Tensor, mask, class_weights=None) -> Tensor:
    """Class-weighted mean per-pixel cross-entropy of a score map.

    ``mask`` holds integer labels shaped ``N x H x W``.  The loss is
    ``sum(w[gt] * nll) / sum(w[gt])`` so its scale does not depend on the
    overall weight magnitude.
    """
    if scores.ndim != 4:
        raise DimensionError(f"pixel_softmax_loss expects N x K x H x W scores, got {scores.shape}")
    n, k, h, w = scores.shape
    mask = np.asarray(mask, dtype=np.int64)
    if mask.ndim == 2:
        mask = mask[None]
    if mask.shape != (n, h, w):
        raise DimensionError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    if k < 2:
        raise ContractError("pixel_softmax_loss needs at least 2 classes")
    _check_labels(mask, k)
    cw = np.ones(k) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if cw.shape != (k,):
        raise DimensionError(f"class weights {cw.shape} for {k} classes")

    p = _softmax(scores.data, 1)
    onehot = (mask[:, None, :, :] == np.arange(k)[None, :, None, None])
    picked = np.take_along_axis(p, mask[:, None], axis=1)[:, 0]
    wpix = cw[mask]
    norm = wpix.sum()
    if norm <= 0:
        raise ContractError("class weights give zero total weight to the mask")
    loss = float((wpix * -np.log(np.maximum(picked, LOG_FLOOR))).sum() / norm)

    def back(g):
        live = (picked > LOG_FLOOR) * wpix * (float(g) / norm)
        return ((p - onehot) * live[:, None],)

    return make_result("pixel_softmax_loss", np.array(loss), (scores,), back)
