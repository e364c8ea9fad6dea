"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it in
execution order, which is a topological order by construction.  Calling
:func:`backward` walks the recorded nodes in reverse and accumulates
gradients additively, so tensors that fan out receive the sum of their
downstream contributions.

Outside an active tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError, TapeLookupError

DTYPE = np.float64


class Tensor:
    """A float64 array plus a flag saying whether gradients are wanted.

    Equality and hashing are by identity so tensors can key gradient maps.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __hash__ = object.__hash__

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str = ""


@dataclass
class Tape:
    """Ordered record of differentiable operations."""

    nodes: list[Node] = field(default_factory=list)

    def __post_init__(self):
        self._produced: dict[int, int] = {}

    def record(self, op, inputs, output, backward_fn):
        self._produced[id(output)] = len(self.nodes)
        self.nodes.append(Node(tuple(inputs), output, backward_fn, op))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._produced

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None):
        return backward(loss, self, params)


_local = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_tape():
    """Suspend recording, e.g. for frozen sub-networks."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{bad} non-finite value(s) produced by {where}")
    return arr


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it if a tape is active.

    ``backward_fn`` maps the output gradient to one gradient (or ``None``)
    per input, in the order of ``inputs``.
    """
    check_finite(data, op)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] | None = None) -> dict:
    """Reverse-mode sweep from a scalar ``loss`` recorded on ``tape``.

    Returns a mapping from tensor to gradient array covering every leaf
    tensor (one not produced on the tape) that received a gradient;
    intermediate gradients are released as the sweep passes them.  Tensors listed in ``params`` always appear;
    those the loss does not depend on get zeros.  The ``grad`` attribute of
    each ``requires_grad`` leaf is also set.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss not in tape:
        raise TapeLookupError("loss tensor was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        owners.pop(id(node.output), None)
        in_grads = node.backward(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise DimensionError(
                    f"{node.op} backward produced gradient {g.shape} for input {t.shape}")
            check_finite(g, f"{node.op} backward")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                owners[key] = t

    result = {owners[k]: g for k, g in grads.items()}
    if params is not None:
        for p in params:
            if p not in result:
                result[p] = np.zeros_like(p.data)
    for t, g in result.items():
        if t.requires_grad and t not in tape:
            t.grad = g
    return result


# ---------------------------------------------------------------------------
# elementary ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    A, B = a.data, b.data

    def back(g):
        return g @ B.T, A.T @ g

    return make_result("matmul", A @ B, (a, b), back)


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs identical shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return make_result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return make_result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return make_result("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    return make_result("scale", a.data * c, (a,), lambda g: (g * c,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result("sum", np.array(a.data.sum()), (a,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return make_result("mean", np.array(a.data.mean()), (a,),
                       lambda g: (np.full(shape, float(g) / n),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return make_result("reshape", out, (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Classical momentum SGD state: ``v <- m*v - lr*g; p <- p + v``."""

    learning_rate: float
    momentum: float = 0.9
    velocities: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(params: Sequence[Tensor], grads, state: OptimizerState) -> Sequence[Tensor]:
    """Apply one momentum step in place and return ``params``.

    ``grads`` is either a mapping from tensor to array or a sequence aligned
    with ``params``.  Velocities are keyed by parameter identity.
    """
    if isinstance(grads, dict):
        grad_list = [grads[p] for p in params]
    else:
        grad_list = list(grads)
        if len(grad_list) != len(params):
            raise DimensionError(f"{len(params)} parameters but {len(grad_list)} gradients")
    lr, m = state.learning_rate, state.momentum
    for p, g in zip(params, grad_list):
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v = state.velocities.get(id(p))
        if v is None:
            v = np.zeros_like(p.data)
        elif v.shape != p.shape:
            raise DimensionError(f"velocity shape {v.shape} does not match parameter {p.shape}")
        v = m * v - lr * g
        state.velocities[id(p)] = v
        p.data += v
        check_finite(p.data, "sgd_step")
    return params
