"""Dense tensors with a reverse-mode gradient tape.

Every model in the package is written against :class:`Tensor`. Arrays are
float32 by default; pass float64 data (or use :func:`precision`) for
gradient checks.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "ContractError",
    "tensor",
    "precision",
    "no_grad",
    "matmul",
    "softmax_rows",
    "log_softmax_rows",
    "layer_norm",
    "activations",
    "gelu",
    "silu",
    "sigmoid",
    "l2_normalize",
    "concat",
    "stack",
    "causal_depthwise_conv1d",
    "grad_check",
]


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ShapeError(ContractError):
    pass


class NonFiniteError(ContractError):
    pass


class TapeError(RuntimeError):
    pass


_default_dtype = np.dtype(np.float32)
_grad_enabled = True

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used when wrapping non-array data."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if isinstance(data, np.floating):
        data = np.asarray(data)
    if isinstance(data, np.ndarray) and data.dtype.kind == "f" and dtype is None:
        if data.dtype == np.float16:
            return data.astype(np.float32)
        return data
    return np.asarray(data, dtype=dtype or _default_dtype)


class Tensor:
    """An n-d float array that can record the ops applied to it.

    ``requires_grad`` leaves collect gradients in ``.grad`` when
    :meth:`backward` is called on a scalar downstream of them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None, allow_nonfinite: bool = False):
        arr = _as_array(data, dtype)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        if not allow_nonfinite and not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._released = False

    # -- basic properties --------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autograd ----------------------------------------------------------
    def backward(self, grad=None) -> None:
        GradTape.from_output(self).backward(grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


class GradTape:
    """Topologically ordered view of the graph feeding one output."""

    def __init__(self, nodes: list, output: Tensor):
        self.nodes = nodes
        self.output = output
        self.leaf_ids = [id(n) for n in nodes if n.is_leaf]

    @classmethod
    def from_output(cls, out: Tensor) -> "GradTape":
        if out._released:
            raise TapeError("backward already ran on this graph; rebuild it before calling again")
        if not out.requires_grad:
            raise TapeError("output does not depend on any tensor with requires_grad=True")
        order: list = []
        seen: set = set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            if node._released:
                raise TapeError("graph contains nodes released by an earlier backward pass")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order, out)

    def backward(self, grad=None) -> list:
        out = self.output
        if grad is None:
            if out.size != 1:
                raise ContractError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(out.data)
        grads = {id(out): np.asarray(grad, dtype=out.dtype).reshape(out.shape)}
        visited = []
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            visited.append(id(node))
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in self.nodes:
            if not node.is_leaf:
                node._backward = None
                node._parents = ()
                node._released = True
        return visited


# -- broadcasting helpers ----------------------------------------------------

def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    small, big = (a, b) if a.ndim < b.ndim else (b, a)
    if small.ndim < big.ndim and big.shape[big.ndim - small.ndim:] == small.shape:
        return
    raise ShapeError(f"shapes {a.shape} and {b.shape} only broadcast over leading dimensions")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    ad = a.data
    return _result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _result(out, (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = _sigmoid_np(a.data)
    return _result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def silu(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    s = _sigmoid_np(x)
    return _result(x * s, (a,), lambda g: (g * s * (1 + x * (1 - s)),), "silu")


def gelu(a) -> Tensor:
    """GELU, tanh approximation with the usual fixed constants."""
    a = _wrap(a)
    x = a.data
    t = np.tanh(GELU_C * (x + GELU_A * x ** 3))
    out = 0.5 * x * (1 + t)

    def back(g):
        dt = (1 - t * t) * GELU_C * (1 + 3 * GELU_A * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * dt),)

    return _result(out, (a,), back, "gelu")


def activations(x, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(x)
    if kind == "silu":
        return silu(x)
    raise ContractError(f"unknown activation {kind!r}")


# -- reductions and shape ops -------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    n = a.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).astype(a.dtype),)

    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), back, "mean")


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = _wrap(a)
    shape, dtype = a.shape, a.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), back, "getitem")


def concat(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [_wrap(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _result(np.concatenate([x.data for x in xs], axis=axis), xs,
                   lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [_wrap(x) for x in xs]
    n = len(xs)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(np.stack([x.data for x in xs], axis=axis), xs, back, "stack")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be 2-D (shared across the leading batch axes of ``a``) or have
    exactly the same leading axes as ``a``.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    # a shared 2-D right operand: one flat GEMM instead of a batched loop
    flat = bd.ndim == 2 and ad.ndim > 2

    def back(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g2
        else:
            ga = g @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:]) if flat else ad @ bd
    return _result(out, (a, b), back, "matmul")


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, stabilised by per-row max subtraction."""
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), back, "softmax")


def log_softmax_rows(x) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), back, "log_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs a last dimension of at least 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"gain/bias must have shape ({d},)")
    if eps <= 0:
        raise ContractError("eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def back(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gain, bias), back, "layer_norm")


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Scale rows (last axis) to unit Euclidean norm."""
    x = _wrap(x)
    norm = np.maximum(np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True)), eps)
    y = x.data / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _result(y, (x,), back, "l2_normalize")


def causal_depthwise_conv1d(x, weight, bias) -> Tensor:
    """Per-channel causal convolution along time.

    x: (B, C, T); weight: (C, k); bias: (C,). Output at time t only sees
    inputs at times t, t-1, ..., t-k+1 (zero padded on the left).
    """
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[0] != x.shape[1] or bias.shape != (x.shape[1],):
        raise ShapeError(f"conv shapes incompatible: x{x.shape} w{weight.shape} b{bias.shape}")
    B, C, T = x.shape
    k = weight.shape[1]
    xp = np.concatenate([np.zeros((B, C, k - 1), dtype=x.dtype), x.data], axis=2)
    w = weight.data
    out = np.broadcast_to(bias.data[None, :, None], (B, C, T)).copy()
    for j in range(k):
        out += w[None, :, j, None] * xp[:, :, k - 1 - j:k - 1 - j + T]

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for j in range(k):
            sl = slice(k - 1 - j, k - 1 - j + T)
            gxp[:, :, sl] += w[None, :, j, None] * g
            gw[:, j] = (g * xp[:, :, sl]).sum(axis=(0, 2))
        return gxp[:, :, k - 1:], gw, g.sum(axis=(0, 2))

    return _result(out, (x, weight, bias), back, "causal_conv1d")


# -- verification -------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, coords=None) -> float:
    """Largest relative gap between backprop and central differences.

    ``f`` maps a Tensor to a scalar Tensor. Everything runs in float64.
    ``coords`` optionally restricts the check to a subset of flat indices.
    Error per coordinate is ``|analytic - fd| / max(1, |analytic|)``.
    """
    if not 1e-5 <= h <= 1e-2:
        raise ContractError("step h must lie in [1e-5, 1e-2]")
    base = np.array(_as_array(x), dtype=np.float64)
    with precision(np.float64):
        xt = Tensor(base.copy(), requires_grad=True)
        out = f(xt)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError("grad_check needs f to return a scalar Tensor")
        if out.requires_grad:
            out.backward()
        analytic = xt.grad if xt.grad is not None else np.zeros_like(base)
        flat = base.reshape(-1)
        idx = range(flat.size) if coords is None else coords
        worst = 0.0
        with no_grad():
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(Tensor(base.copy())).data)
                flat[i] = orig - h
                fm = float(f(Tensor(base.copy())).data)
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                a = float(analytic.reshape(-1)[i])
                worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
