"""Small reverse-mode differentiation engine over numpy arrays.

Every differentiable quantity in the package is a :class:`Value`. Operations
record their parents plus a closure that pushes the upstream gradient back to
them; :func:`backward` walks the record in reverse topological order.

Two custom-gradient nodes live here as well: :func:`spike` (hard threshold
forward, piecewise-linear surrogate backward) and :func:`gate` (hard
comparison forward, logistic straight-through backward).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        listed = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Value:
    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents: Sequence["Value"] = (), backward: Callable | None = None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = np.zeros_like(self.data)
        if _grad_enabled:
            self._parents = tuple(parents)
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Value":
        return Value(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape})"

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Value, b: Value) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("add", a, b)
    out = Value(a.data + b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad += _unbroadcast(out.grad, b.shape)

    out._backward = _bw if out._parents else None
    return out


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("sub", a, b)
    out = Value(a.data - b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad -= _unbroadcast(out.grad, b.shape)

    out._backward = _bw if out._parents else None
    return out


def neg(a) -> Value:
    a = as_value(a)
    out = Value(-a.data, (a,))

    def _bw():
        a.grad -= out.grad

    out._backward = _bw if out._parents else None
    return out


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("mul", a, b)
    out = Value(a.data * b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad * b.data, a.shape)
        b.grad += _unbroadcast(out.grad * a.data, b.shape)

    out._backward = _bw if out._parents else None
    return out


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("div", a, b)
    out = Value(a.data / b.data, (a, b))

    def _bw():
        a.grad += _unbroadcast(out.grad / b.data, a.shape)
        b.grad -= _unbroadcast(out.grad * a.data / (b.data * b.data), b.shape)

    out._backward = _bw if out._parents else None
    return out


def tanh(a) -> Value:
    a = as_value(a)
    t = np.tanh(a.data)
    out = Value(t, (a,))

    def _bw():
        a.grad += out.grad * (1.0 - t * t)

    out._backward = _bw if out._parents else None
    return out


def _logistic(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Value:
    a = as_value(a)
    s = _logistic(a.data)
    out = Value(s, (a,))

    def _bw():
        a.grad += out.grad * s * (1.0 - s)

    out._backward = _bw if out._parents else None
    return out


def exp(a) -> Value:
    a = as_value(a)
    e = np.exp(a.data)
    out = Value(e, (a,))

    def _bw():
        a.grad += out.grad * e

    out._backward = _bw if out._parents else None
    return out


def log(a) -> Value:
    a = as_value(a)
    out = Value(np.log(a.data), (a,))

    def _bw():
        a.grad += out.grad / a.data

    out._backward = _bw if out._parents else None
    return out


def square(a) -> Value:
    a = as_value(a)
    out = Value(a.data * a.data, (a,))

    def _bw():
        a.grad += 2.0 * a.data * out.grad

    out._backward = _bw if out._parents else None
    return out


def greater_equal(a, b) -> Value:
    """Elementwise ``a >= b`` as a 0/1 constant (no gradient)."""
    a, b = as_value(a), as_value(b)
    _broadcast_shape("greater_equal", a, b)
    return Value((a.data >= b.data).astype(DTYPE))


def detach(a) -> Value:
    return Value(as_value(a).data)


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None) -> Value:
    a = as_value(a)
    out = Value(a.data.sum(axis=axis), (a,))

    def _bw():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.shape)

    out._backward = _bw if out._parents else None
    return out


def mean(a, axis=None) -> Value:
    a = as_value(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    out = Value(a.data.mean(axis=axis), (a,))

    def _bw():
        g = out.grad / n
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.shape)

    out._backward = _bw if out._parents else None
    return out


def l2norm(a) -> Value:
    """Euclidean norm of all elements. Gradient at the origin is taken as 0."""
    a = as_value(a)
    n = float(np.sqrt(np.sum(a.data * a.data)))
    out = Value(n, (a,))

    def _bw():
        if n > 0.0:
            a.grad += out.grad * a.data / n

    out._backward = _bw if out._parents else None
    return out


def logsumexp(a, axis=-1) -> Value:
    a = as_value(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = Value(np.squeeze(m + np.log(s), axis=axis), (a,))

    def _bw():
        a.grad += np.expand_dims(out.grad, axis) * (shifted / s)

    out._backward = _bw if out._parents else None
    return out


# ---------------------------------------------------------------- structure

def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = Value(a.data @ b.data, (a, b))

    def _bw():
        g = out.grad
        if a.ndim == 1 and b.ndim == 1:
            a.grad += g * b.data
            b.grad += g * a.data
        elif b.ndim == 1:
            a.grad += np.multiply.outer(g, b.data)
            b.grad += np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
        elif a.ndim == 1:
            a.grad += b.data @ g
            b.grad += np.multiply.outer(a.data, g)
        else:
            a.grad += _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            b.grad += _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    out._backward = _bw if out._parents else None
    return out


def reshape(a, shape) -> Value:
    a = as_value(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(np.atleast_1d(shape))) from None
    out = Value(data, (a,))

    def _bw():
        a.grad += out.grad.reshape(a.shape)

    out._backward = _bw if out._parents else None
    return out


def transpose(a, axes=None) -> Value:
    a = as_value(a)
    out = Value(np.transpose(a.data, axes), (a,))
    inv = None if axes is None else np.argsort(axes)

    def _bw():
        a.grad += np.transpose(out.grad, inv)

    out._backward = _bw if out._parents else None
    return out


def concat(values: Iterable, axis: int = 0) -> Value:
    vals = [as_value(v) for v in values]
    try:
        data = np.concatenate([v.data for v in vals], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(v.shape for v in vals)) from None
    out = Value(data, vals)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def _bw():
        for v, g in zip(vals, np.split(out.grad, bounds, axis=axis)):
            v.grad += g

    out._backward = _bw if out._parents else None
    return out


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis for i in items)


def getitem(a, idx) -> Value:
    a = as_value(a)
    out = Value(a.data[idx], (a,))
    basic = _is_basic_index(idx)

    def _bw():
        if basic:
            a.grad[idx] += out.grad
        else:
            np.add.at(a.grad, idx, out.grad)

    out._backward = _bw if out._parents else None
    return out


def stack(values: Iterable, axis: int = 0) -> Value:
    vals = [as_value(v) for v in values]
    try:
        data = np.stack([v.data for v in vals], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(v.shape for v in vals)) from None
    out = Value(data, vals)

    def _bw():
        for i, v in enumerate(vals):
            v.grad += np.take(out.grad, i, axis=axis)

    out._backward = _bw if out._parents else None
    return out


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Value:
    """Cross-correlation of ``x`` [B, C, H, W] with ``w`` [O, C, kh, kw]."""
    x, w = as_value(x), as_value(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d", x.shape, w.shape)
    xp = _pad(x.data, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]          # B C Ho Wo kh kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = Value((cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2), (x, w))

    def _bw():
        g = out.grad.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        w.grad += (g.T @ cols).reshape(w.shape)
        dcols = (g @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        x.grad += dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp

    out._backward = _bw if out._parents else None
    return out


# ---------------------------------------------------------------- custom nodes

def surrogate_grad(delta: np.ndarray, lam: float) -> np.ndarray:
    """Local derivative of the spike w.r.t. potential: 0 outside |delta| <= 1/lam,
    else lam - lam**2 * |delta|."""
    ad = np.abs(delta)
    return np.where(ad <= 1.0 / lam, lam - lam * lam * ad, 0.0)


def spike(u, vth: float, lam: float = 2.0, centering: str = "threshold") -> Value:
    """Hard threshold ``u >= vth`` with the triangular surrogate in backward.

    ``centering="threshold"`` evaluates the surrogate at ``u - vth``;
    ``"literal"`` evaluates it at ``u`` itself.
    """
    if lam <= 0:
        raise ValueError("surrogate width lambda must be > 0")
    u = as_value(u)
    out = Value((u.data >= vth).astype(DTYPE), (u,))
    if centering == "threshold":
        delta = u.data - vth
    elif centering == "literal":
        delta = u.data
    else:
        raise ValueError(f"unknown surrogate centering {centering!r}")

    def _bw():
        u.grad += out.grad * surrogate_grad(delta, lam)

    out._backward = _bw if out._parents else None
    return out


def gate_grad(diff: np.ndarray, temperature: float) -> np.ndarray:
    """d/da logistic((a - a_tilde) / T)."""
    s = _logistic(diff / temperature)
    return s * (1.0 - s) / temperature


def gate(a, a_tilde, temperature: float = 1.0) -> Value:
    """Binary gate ``a >= a_tilde`` with a logistic straight-through backward."""
    a, a_tilde = as_value(a), as_value(a_tilde)
    if a.shape != a_tilde.shape:
        raise ShapeError("gate", a.shape, a_tilde.shape)
    diff = a.data - a_tilde.data
    out = Value((diff >= 0).astype(DTYPE), (a, a_tilde))

    def _bw():
        g = out.grad * gate_grad(diff, temperature)
        a.grad += g
        a_tilde.grad -= g

    out._backward = _bw if out._parents else None
    return out


# ---------------------------------------------------------------- backward pass

def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    Intermediate gradients are reset first so repeated calls on the same
    record only accumulate into leaves.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        if node._parents:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
