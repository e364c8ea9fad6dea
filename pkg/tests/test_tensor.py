import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leafroi.errors import ContractError, DimensionError, NonFiniteError, TapeLookupError
from leafroi.gradcheck import check_gradients
from leafroi.layers import relu
from leafroi.tensor import (
    OptimizerState,
    Tape,
    Tensor,
    add,
    backward,
    matmul,
    mul,
    reshape,
    scale,
    sgd_step,
    sum_all,
)


def test_matmul_identity():
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), b).data, b.data)


def test_matmul_hand_sum():
    # 1*3 + 2*4
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_product_rule():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = x * y
    g = backward(loss, tape)
    assert g[x] == 3.0 and g[y] == 2.0
    assert x.grad == 3.0


def test_backward_relu_matvec_matches_finite_differences():
    rng = np.random.default_rng(3)
    w = Tensor(rng.standard_normal((4, 5)))
    v = Tensor(rng.standard_normal((5, 1)))
    err = check_gradients(lambda w, v: sum_all(relu(matmul(w, v))), [w, v])
    assert err <= 1e-6


def test_unused_parameter_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor(np.ones((3, 3)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(scale(x, 2.0))
    g = backward(loss, tape, [x, unused])
    np.testing.assert_array_equal(g[unused], np.zeros((3, 3)))
    np.testing.assert_array_equal(g[x], [2.0, 2.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(y, tape)


def test_backward_rejects_tensor_not_on_tape():
    x = Tensor(1.0, requires_grad=True)
    with Tape():
        loss = scale(x, 2.0)
    with pytest.raises(TapeLookupError):
        backward(loss, Tape())


def test_fan_out_accumulates():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = add(mul(x, x), x)  # x^2 + x
    assert backward(loss, tape)[x] == pytest.approx(7.0)


def test_no_recording_outside_tape():
    x = Tensor(1.0, requires_grad=True)
    y = scale(x, 2.0)
    with Tape() as tape:
        pass
    assert y not in tape and len(tape) == 0


def test_non_finite_forward_aborts():
    with pytest.raises(NonFiniteError):
        scale(Tensor([1e308]), 10.0)


def test_reshape_round_trip_gradient():
    x = Tensor(np.arange(6.0), requires_grad=True)
    assert check_gradients(lambda x: reshape(x, (2, 3)), [x]) <= 1e-9


# --- optimizer


def test_sgd_plain_step():
    p = Tensor([1.0])
    sgd_step([p], [np.array([2.0])], OptimizerState(0.1, momentum=0.0))
    assert p.data[0] == pytest.approx(0.8)


def test_sgd_zero_gradient_is_fixed_point():
    p = Tensor([1.5, -2.0])
    state = OptimizerState(0.3, momentum=0.7)
    for _ in range(3):
        sgd_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_sgd_momentum_two_steps():
    # v1 = -0.1, p1 = -0.1; v2 = 0.9 * -0.1 - 0.1 = -0.19, p2 = -0.29
    p = Tensor([0.0])
    state = OptimizerState(0.1, momentum=0.9)
    for _ in range(2):
        sgd_step([p], [np.array([1.0])], state)
    assert p.data[0] == pytest.approx(-0.29, abs=1e-15)


def test_sgd_shape_mismatch():
    with pytest.raises(DimensionError):
        sgd_step([Tensor([0.0, 1.0])], [np.zeros(3)], OptimizerState(0.1))


def test_optimizer_state_validates_momentum():
    with pytest.raises(ContractError):
        OptimizerState(0.1, momentum=1.0)


# --- properties

small_arrays = st.integers(min_value=0, max_value=2**31 - 1)


@settings(max_examples=25, deadline=None)
@given(seed=small_arrays, m=st.integers(1, 4), k=st.integers(1, 4), n=st.integers(1, 4))
def test_composite_gradient_property(seed, m, k, n):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((m, k)))
    b = Tensor(rng.standard_normal((k, n)))
    c = Tensor(rng.standard_normal((m, n)))

    def f(a, b, c):
        return sum_all(mul(relu(add(matmul(a, b), c)), c))

    assert check_gradients(f, [a, b, c]) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=small_arrays, alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_backward_is_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)

    def f():
        return sum_all(relu(matmul(w, w)))

    def g():
        return sum_all(mul(w, w))

    grads = []
    for fn in (f, g):
        with Tape() as tape:
            loss = fn()
        grads.append(backward(loss, tape)[w])
    with Tape() as tape:
        loss = add(scale(f(), alpha), scale(g(), beta))
    combined = backward(loss, tape)[w]
    np.testing.assert_allclose(combined, alpha * grads[0] + beta * grads[1], rtol=1e-12, atol=1e-12)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        a = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        with Tape() as tape:
            loss = sum_all(relu(matmul(a, b)))
        g = backward(loss, tape)
        return loss.data.tobytes(), g[a].tobytes(), g[b].tobytes()

    assert run() == run()
