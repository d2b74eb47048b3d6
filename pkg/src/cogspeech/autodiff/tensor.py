"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its inputs and a backward rule on its output;
``backward`` on a scalar loss walks the recorded graph once in reverse
topological order and accumulates gradients into the ``requires_grad``
leaves.  Graphs are rebuilt on every forward pass, so recurrences of
varying length need no special casing.  Everything is 64-bit: finite
difference checks at 1e-4 tolerance are unreliable in 32-bit.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "backward",
    "zero_grads",
    "matmul",
    "softmax",
    "log_softmax",
    "layer_norm",
    "conv1d",
    "concat",
    "stack",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "sigmoid",
    "gelu",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    """Dense float64 array participating in a gradient graph.

    A tensor created directly is a leaf; whether it accumulates gradient
    is controlled by ``requires_grad``.  Tensors produced by operations
    carry the backward rule of the operation that made them.  Constants
    (no differentiable ancestry) never join the graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant tensor sharing this tensor's data buffer."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic -------------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording the graph only when gradient can flow."""
    out = Tensor(data)
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# graph traversal ------------------------------------------------------


def backward(loss: Tensor):
    """Populate gradients of ``loss`` w.r.t. every reachable leaf.

    Repeated calls without ``zero_grads`` accumulate additively.  A node
    feeding several consumers receives the sum of their contributions.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() requires a scalar loss, got shape {loss.shape}")

    # Iterative topological sort; recursion would overflow on long recurrences.
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors):
    """Reset gradient buffers to zero (explicit, never implicit)."""
    values = tensors.values() if isinstance(tensors, dict) else tensors
    for t in values:
        t.zero_grad()


# elementwise binary ops -----------------------------------------------


def _broadcast_data(a: Tensor, b: Tensor, op_name: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{op_name}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "add")

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "sub")

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "mul")

    def backward_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "div")

    def backward_fn(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(a.data / b.data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data**exponent

    def backward_fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out_data, (a,), backward_fn)


# elementwise unary ops ------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, (a,), lambda g: (g * 0.5 / out_data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def gelu(a) -> Tensor:
    """Gaussian-CDF GELU, x * Phi(x).

    The exact erf form (not the tanh approximation) keeps the analytic
    derivative consistent with finite differences at tight tolerances.
    """
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * cdf

    def backward_fn(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return _make(out_data, (a,), backward_fn)


# reductions -----------------------------------------------------------


def _restore_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if not keepdims and axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        return (_restore_reduced(np.asarray(g), a.data.shape, axis, keepdims),)

    return _make(out_data, (a,), backward_fn)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size // out_data.size

    def backward_fn(g):
        return (_restore_reduced(np.asarray(g) / count, a.data.shape, axis, keepdims),)

    return _make(out_data, (a,), backward_fn)


# shape ops ------------------------------------------------------------


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)
    return _make(out_data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, *axes) -> Tensor:
    a = as_tensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)
    return _make(out_data, (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[key]

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(out_data, dtype=np.float64), (a,), backward_fn)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty tensor list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(out_data, tensors, backward_fn)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack: empty tensor list")
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        pieces = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in pieces)

    return _make(out_data, tensors, backward_fn)


# linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; operands of ndim >= 2, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.data.shape} x {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward_fn(g):
        da = np.matmul(g, np.swapaxes(b.data, -2, -1))
        db = np.matmul(np.swapaxes(a.data, -2, -1), g)
        return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)

    return _make(out_data, (a, b), backward_fn)


# structured ops -------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    """Normalized exponentials along ``axis``; max-subtracted for overflow safety."""
    a = as_tensor(a)
    if a.data.shape == () or a.data.shape[axis] < 1:
        raise ShapeError(f"softmax: axis {axis} of shape {a.data.shape} is empty")
    if not np.all(np.isfinite(a.data)):
        raise ValueError("softmax: non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - inner) * out_data,)

    return _make(out_data, (a,), backward_fn)


def log_softmax(a, axis=-1) -> Tensor:
    """Log of softmax via log-sum-exp; never forms explicit probabilities."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise ValueError("log_softmax: non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward_fn(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return _make(out_data, (a,), backward_fn)


_LAYER_NORM_EPS = 1e-12


def layer_norm(a, gain, bias) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance,
    then apply the learned elementwise scale and shift."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    n = a.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature dim {n}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LAYER_NORM_EPS)
    xhat = (a.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward_fn(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        da = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return da, dgain, dbias

    return _make(out_data, (a, gain, bias), backward_fn)


def conv1d(x, w, b=None, stride: int = 1) -> Tensor:
    """1-D cross-correlation: x (B, C_in, T), w (C_out, C_in, K), b (C_out,).

    No padding; output length is (T - K) // stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(
            f"conv1d: expected 3-D input and kernel, got {x.data.shape} and {w.data.shape}"
        )
    batch, c_in, t_in = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d: channel mismatch, input {c_in} vs kernel {c_in_w}")
    if t_in < k:
        raise ShapeError(f"conv1d: input length {t_in} shorter than kernel {k}")
    if stride < 1:
        raise ValueError(f"conv1d: stride must be positive, got {stride}")
    t_out = (t_in - k) // stride + 1
    tiled = stride == k  # windows tile the input: gather/scatter by reshape
    if tiled:
        idx = None
        patches = x.data[:, :, : t_out * k].reshape(batch, c_in, t_out, k)
    else:
        idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
        patches = x.data[:, :, idx]  # (B, C_in, T_out, K)
    out_data = np.einsum("bcok,dck->bdo", patches, w.data, optimize=True)

    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {b.data.shape}, expected ({c_out},)")
        out_data = out_data + b.data[:, None]
        parents.append(b)

    def backward_fn(g):
        dw = np.einsum("bdo,bcok->dck", g, patches, optimize=True)
        dpatches = np.einsum("bdo,dck->bcok", g, w.data, optimize=True)
        dx = np.zeros_like(x.data)
        if tiled:
            dx[:, :, : t_out * k].reshape(batch, c_in, t_out, k)[...] = dpatches
        else:
            np.add.at(dx, (slice(None), slice(None), idx), dpatches)
        return (dx, dw) if b is None else (dx, dw, g.sum(axis=(0, 2)))

    return _make(out_data, parents, backward_fn)
