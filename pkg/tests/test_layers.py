import math

import numpy as np
import pytest

from leafroi import layers as L
from leafroi.errors import ConfigurationError, ContractError, DimensionError
from leafroi.gradcheck import check_gradients
from leafroi.tensor import Tape, Tensor, backward, sum_all


def naive_conv2d(x, k, b, stride, pad):
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for oc in range(o):
            for r in range(ho):
                for q in range(wo):
                    acc = b[oc]
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ic, r * stride + u, q * stride + v] * k[oc, ic, u, v]
                    out[i, oc, r, q] = acc
    return out


def conv(k, b=None, stride=1, pad=0):
    k = np.asarray(k, dtype=float)
    return L.ConvParams(Tensor(k), Tensor(np.zeros(k.shape[0]) if b is None else b), stride, pad)


# --- conv2d


def test_conv2d_ones():
    out = L.conv2d(Tensor(np.ones((1, 1, 3, 3))), conv(np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).random((2, 1, 5, 4))
    np.testing.assert_array_equal(L.conv2d(Tensor(x), conv(np.ones((1, 1, 1, 1)))).data, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_direct_summation(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 3, 7, 7))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = L.conv2d(Tensor(x), conv(k, b, stride, pad))
    np.testing.assert_allclose(out.data, naive_conv2d(x, k, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv2d_gradient():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    k = Tensor(rng.standard_normal((3, 2, 3, 3)))
    b = Tensor(rng.standard_normal(3))
    err = check_gradients(lambda x, k, b: L.conv2d(x, L.ConvParams(k, b, 1, 1)), [x, k, b])
    assert err <= 1e-6


def test_conv2d_errors():
    with pytest.raises(ConfigurationError):
        L.conv2d(Tensor(np.ones((1, 1, 4, 4))), conv(np.ones((1, 1, 3, 3)), stride=2))
    with pytest.raises(DimensionError):
        L.conv2d(Tensor(np.ones((1, 2, 4, 4))), conv(np.ones((1, 1, 3, 3))))


# --- tconv2d


def test_tconv2d_single_pixel_stamp():
    out = L.tconv2d(Tensor(np.full((1, 1, 1, 1), 2.0)),
                    L.TConvParams(Tensor(np.ones((1, 1, 3, 3))), stride=2))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_tconv2d_output_extent():
    out = L.tconv2d(Tensor(np.ones((1, 2, 6, 5))), L.TConvParams(Tensor(np.ones((2, 3, 4, 4))), 2))
    assert out.shape == (1, 3, 14, 12)


def test_tconv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        L.tconv2d(Tensor(np.ones((1, 3, 2, 2))), L.TConvParams(Tensor(np.ones((2, 2, 4, 4))), 2))


@pytest.mark.parametrize("stride,k", [(1, 3), (2, 4), (4, 8), (3, 3)])
def test_conv_tconv_adjoint(stride, k):
    rng = np.random.default_rng(stride + k)
    kernel = rng.standard_normal((3, 2, k, k))
    y = rng.standard_normal((2, 3, 4, 5))
    x = rng.standard_normal((2, 2, (4 - 1) * stride + k, (5 - 1) * stride + k))
    cx = L.conv2d(Tensor(x), conv(kernel, stride=stride)).data
    ty = L.tconv2d(Tensor(y), L.TConvParams(Tensor(kernel), stride)).data
    assert abs((cx * y).sum() - (x * ty).sum()) <= 1e-9


def test_bilinear_init_preserves_constant_interior():
    kernel = L.bilinear_kernel(2, 2, 4)
    x = np.full((1, 2, 6, 6), 0.7)
    out = L.tconv2d(Tensor(x), L.TConvParams(Tensor(kernel), 2)).data
    # border rows/cols of width 2 receive only one tap
    np.testing.assert_allclose(out[:, :, 2:-2, 2:-2], 0.7, rtol=1e-14)


def test_bilinear_weights_closed_form():
    np.testing.assert_allclose(L.bilinear_kernel(1, 1, 4)[0, 0, 0], [0.0625, 0.1875, 0.1875, 0.0625])


def test_tconv2d_gradient():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((1, 2, 3, 3)))
    k = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert check_gradients(lambda x, k: L.tconv2d(x, L.TConvParams(k, 2)), [x, k]) <= 1e-6


# --- crop / add / concat


def test_crop_identity_and_center():
    x = np.arange(100.0).reshape(1, 1, 10, 10)
    np.testing.assert_array_equal(L.crop(Tensor(x), Tensor(x)).data, x)
    out = L.crop(Tensor(x), (6, 6))
    np.testing.assert_array_equal(out.data, x[:, :, 2:8, 2:8])


def test_crop_reference_too_large():
    with pytest.raises(DimensionError):
        L.crop(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 6, 6))))


def test_crop_backward_window():
    x = Tensor(np.ones((1, 2, 6, 6)), requires_grad=True)
    g = np.random.default_rng(0).standard_normal((1, 2, 3, 3))
    with Tape() as tape:
        loss = sum_all(L.crop(x, (3, 3), (1, 2)) * Tensor(g))
    dx = backward(loss, tape)[x]
    np.testing.assert_array_equal(dx[:, :, 1:4, 2:5], g)
    dx[:, :, 1:4, 2:5] = 0
    assert not dx.any()


def test_add_elementwise():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    np.testing.assert_array_equal(L.add_elementwise(a, Tensor([[3.0, 4.0]])).data, [[4.0, 6.0]])
    np.testing.assert_array_equal(L.add_elementwise(a, Tensor(np.zeros((1, 2)))).data, a.data)
    with Tape() as tape:
        loss = sum_all(L.add_elementwise(a, Tensor([[3.0, 4.0]], requires_grad=True)))
    np.testing.assert_array_equal(backward(loss, tape)[a], np.ones((1, 2)))
    with pytest.raises(DimensionError):
        L.add_elementwise(a, Tensor([[1.0, 2.0, 3.0]]))


def test_concat_channels():
    rng = np.random.default_rng(2)
    img, roi = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
    out = L.concat_channels(Tensor(img), Tensor(roi))
    assert out.shape == (2, 6, 4, 4)
    np.testing.assert_array_equal(out.data[:, 3:6], roi)
    np.testing.assert_array_equal(L.concat_channels(Tensor(img), Tensor(np.zeros((2, 0, 4, 4)))).data, img)
    with pytest.raises(DimensionError):
        L.concat_channels(Tensor(img), Tensor(np.zeros((2, 1, 5, 4))))


# --- pooling, relu, fully connected


def test_maxpool2():
    assert L.maxpool2(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])).data.item() == 4.0
    with pytest.raises(ConfigurationError):
        L.maxpool2(Tensor(np.ones((1, 1, 3, 4))))


def test_maxpool2_ties_go_to_first_in_row_major():
    x = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(L.maxpool2(x))
    np.testing.assert_array_equal(backward(loss, tape)[x][0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_relu_values():
    np.testing.assert_array_equal(L.relu(Tensor([-5.0, 5.0])).data, [0.0, 5.0])


def test_fully_connected_gradient():
    rng = np.random.default_rng(4)
    x, w, b = (Tensor(rng.standard_normal(s)) for s in [(3, 5), (5, 4), (4,)])
    assert check_gradients(L.fully_connected, [x, w, b]) <= 1e-6


# --- softmax and losses


def test_uniform_softmax_and_cross_entropy():
    p = L.softmax(Tensor(np.zeros((1, 3))))
    np.testing.assert_allclose(p.data, [[1 / 3] * 3])
    assert L.cross_entropy(p, [1]).item() == pytest.approx(math.log(3), rel=1e-14)


def test_perfect_prediction_zero_loss_and_clamp():
    assert L.cross_entropy(Tensor([[0.0, 1.0, 0.0]]), [1]).item() == 0.0
    assert L.cross_entropy(Tensor([[1.0, 0.0, 0.0]]), [1]).item() == pytest.approx(-math.log(1e-12))


def test_softmax_stable_for_large_logits():
    rng = np.random.default_rng(0)
    p = L.softmax(Tensor(rng.standard_normal((5, 4)) * 1e3)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_label_out_of_range():
    with pytest.raises(ContractError):
        L.cross_entropy(Tensor([[0.5, 0.5]]), [2])
    with pytest.raises(ContractError):
        L.pixel_softmax_loss(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))


def test_pixel_loss_gradient():
    rng = np.random.default_rng(6)
    scores = Tensor(rng.standard_normal((1, 3, 4, 4)))
    mask = rng.integers(0, 3, (1, 4, 4))
    weights = np.array([0.5, 1.0, 3.0])
    err = check_gradients(lambda s: L.pixel_softmax_loss(s, mask, weights), [scores])
    assert err <= 1e-6


def test_pixel_loss_uniform_value():
    loss = L.pixel_softmax_loss(Tensor(np.zeros((2, 3, 4, 4))), np.zeros((2, 4, 4), dtype=int))
    assert loss.item() == pytest.approx(math.log(3))


def test_class_weights_inverse_frequency():
    masks = [np.array([[0, 0, 0, 1], [0, 0, 1, 2]])]
    w = L.class_weights_from_masks(masks, 3)
    np.testing.assert_allclose(w, [8 / 15, 8 / 6, 8 / 3])
    np.testing.assert_allclose(L.class_weights_from_masks(masks, 3, "sqrt"), np.sqrt(w))
