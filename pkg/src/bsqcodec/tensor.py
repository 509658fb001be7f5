"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything runs on 32-bit floats on top of numpy. A tensor records the
operation that produced it (inputs + a backward closure); calling
``backward`` on a scalar replays those closures in reverse topological
order. This is all the machinery the desk-scale training loops need, so
there is deliberately no broadcasting beyond what the layers use, no
views, no in-place ops.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

# Tanh-approximation GELU constants. Keeping them spelled out (instead of
# computing sqrt(2/pi) at import time) pins the function bit-for-bit.
GELU_COEF = 0.7978845608028654
GELU_CUBIC = 0.044715


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (missing grad, non-scalar loss, ...)."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / frozen forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=DTYPE)
    return arr


class Tensor:
    """A dense float32 array plus optional autodiff bookkeeping.

    ``_prev`` holds the input tensors of the op that produced this tensor and
    ``_backward`` the closure that routes the output gradient to them; leaves
    have neither. Values are treated as immutable after creation (the
    optimizer is the one sanctioned exception and only touches leaves).
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    # -- gradient plumbing ---------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(DTYPE, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        raise TypeError("tensor division is only supported by scalars")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Build an op output, recording the graph edge only when it can matter."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._prev for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = lambda: backward_fn(out.grad)
    return out


def _needs(t: Tensor) -> bool:
    # Gradient must flow into t if it is a trainable leaf or an interior node.
    return t.requires_grad or bool(t._prev)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable requires-grad tensor with d(loss)/d(tensor)."""
    if loss.data.size != 1:
        raise ContractError("backward() expects a scalar loss")
    if not loss.requires_grad and not loss._prev:
        raise ContractError("backward() called on a tensor with no recorded graph")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


# ---------------------------------------------------------------------------
# elementwise / linear algebra ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bw(g):
        if _needs(a):
            a._accumulate(_unbroadcast(g, a.data.shape))
        if _needs(b):
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def bw(g):
        if _needs(a):
            a._accumulate(_unbroadcast(g, a.data.shape))
        if _needs(b):
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = _wrap(a)
        c = float(b)
        data = a.data * c

        def bw_scalar(g):
            if _needs(a):
                a._accumulate(g * c)

        return _make(data, (a,), bw_scalar)

    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bw(g):
        if _needs(a):
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if _needs(b):
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product; supports 2-D and stacked (leading batch dims) operands."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        if _needs(a):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if _needs(b):
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bw)


def getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]
    if data.base is not None or data is a.data:
        data = data.copy()
    # Integer-array keys may select the same element twice; += would drop
    # the duplicates, np.add.at does not.
    fancy = isinstance(key, np.ndarray) or (
        isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
    )

    def bw(g):
        if _needs(a):
            full = np.zeros_like(a.data)
            if fancy:
                np.add.at(full, key, g)
            else:
                full[key] += g
            a._accumulate(full)

    return _make(data, (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def bw(g):
        if _needs(a):
            a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), bw)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    data = np.transpose(a.data, axes)

    def bw(g):
        if _needs(a):
            if axes is None:
                a._accumulate(np.transpose(g))
            else:
                inv = np.argsort(axes)
                a._accumulate(np.transpose(g, inv))

    return _make(data, (a,), bw)


def cat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if _needs(t):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(idx)])
            offset += n

    return _make(data, tensors, bw)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    data = np.sum(a.data, axis=axis, dtype=DTYPE)
    data = np.asarray(data, dtype=DTYPE)

    def bw(g):
        if _needs(a):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).astype(DTYPE))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).astype(DTYPE))

    return _make(data, (a,), bw)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)

    def bw(g):
        if _needs(a):
            a._accumulate(g * (1.0 - y * y))

    return _make(y, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if _needs(a):
            a._accumulate(g * y * (1.0 - y))

    return _make(y.astype(DTYPE), (a,), bw)


def gelu_raw(x: np.ndarray) -> np.ndarray:
    """Tanh-approximation GELU on a raw array (shared by forward paths)."""
    inner = GELU_COEF * (x + GELU_CUBIC * x * x * x)
    return (0.5 * x * (1.0 + np.tanh(inner))).astype(DTYPE)


def gelu(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    inner = GELU_COEF * (x + GELU_CUBIC * x * x * x)
    t = np.tanh(inner)
    y = (0.5 * x * (1.0 + t)).astype(DTYPE)

    def bw(g):
        if _needs(a):
            dinner = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * x * x)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a._accumulate((g * d).astype(DTYPE))

    return _make(y, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = (e / np.sum(e, axis=axis, keepdims=True)).astype(DTYPE)

    def bw(g):
        if _needs(a):
            dot = np.sum(g * y, axis=axis, keepdims=True)
            a._accumulate((y * (g - dot)).astype(DTYPE))

    return _make(y, (a,), bw)


def mse_loss(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse_loss shapes disagree: {a.data.shape} vs {b.data.shape}")
    d = a.data - b.data
    n = d.size
    data = np.asarray(np.mean(d * d, dtype=DTYPE), dtype=DTYPE)

    def bw(g):
        scale = (2.0 / n) * g
        if _needs(a):
            a._accumulate((scale * d).astype(DTYPE))
        if _needs(b):
            b._accumulate((-scale * d).astype(DTYPE))

    return _make(data, (a, b), bw)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _conv_out_len(T: int, pad_left: int, pad_right: int, K: int, stride: int, dilation: int) -> int:
    span = (K - 1) * dilation + 1
    total = T + pad_left + pad_right
    if total < span:
        return 0
    return (total - span) // stride + 1


def conv1d(x, w, pad_left: int, pad_right: int, stride: int = 1, dilation: int = 1) -> Tensor:
    """Cross-correlation of x[C_in, T] with w[C_out, C_in, K], zero padded.

    Output frame j reads padded positions j*stride + k*dilation; with
    pad_left = K-1 and pad_right = 0 this is the causal convolution.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError("conv1d expects x[C_in, T] and w[C_out, C_in, K]")
    C_in, T = x.data.shape
    C_out, C_in_w, K = w.data.shape
    if C_in_w != C_in:
        raise ShapeError(f"conv1d channel mismatch: x has {C_in}, w expects {C_in_w}")
    if K < 1 or pad_left < 0 or pad_right < 0 or stride < 1 or dilation < 1:
        raise ContractError("conv1d requires K >= 1, pads >= 0, stride/dilation >= 1")

    T_out = _conv_out_len(T, pad_left, pad_right, K, stride, dilation)
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right)))
    out = np.zeros((C_out, T_out), dtype=DTYPE)
    if T_out > 0:
        for k in range(K):
            lo = k * dilation
            xs = xp[:, lo : lo + (T_out - 1) * stride + 1 : stride]
            out += w.data[:, :, k] @ xs

    def bw(g):
        if T_out == 0:
            return
        if _needs(w):
            gw = np.empty_like(w.data)
            for k in range(K):
                lo = k * dilation
                xs = xp[:, lo : lo + (T_out - 1) * stride + 1 : stride]
                gw[:, :, k] = g @ xs.T
            w._accumulate(gw)
        if _needs(x):
            gxp = np.zeros_like(xp)
            for k in range(K):
                lo = k * dilation
                gxp[:, lo : lo + (T_out - 1) * stride + 1 : stride] += w.data[:, :, k].T @ g
            end = gxp.shape[1] - pad_right
            x._accumulate(gxp[:, pad_left:end])

    return _make(out, (x, w), bw)


def dwconv1d(x, w, pad_left: int, pad_right: int = 0, dilation: int = 1) -> Tensor:
    """Depthwise cross-correlation: x[C, T] with one length-K kernel per channel (w[C, K])."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError("dwconv1d expects x[C, T] and w[C, K]")
    C, T = x.data.shape
    C_w, K = w.data.shape
    if C_w != C:
        raise ShapeError(f"dwconv1d channel mismatch: x has {C}, w has {C_w}")

    T_out = _conv_out_len(T, pad_left, pad_right, K, 1, dilation)
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right)))
    out = np.zeros((C, T_out), dtype=DTYPE)
    if T_out > 0:
        for k in range(K):
            lo = k * dilation
            out += w.data[:, k : k + 1] * xp[:, lo : lo + T_out]

    def bw(g):
        if T_out == 0:
            return
        if _needs(w):
            gw = np.empty_like(w.data)
            for k in range(K):
                lo = k * dilation
                gw[:, k] = np.sum(g * xp[:, lo : lo + T_out], axis=1)
            w._accumulate(gw)
        if _needs(x):
            gxp = np.zeros_like(xp)
            for k in range(K):
                lo = k * dilation
                gxp[:, lo : lo + T_out] += w.data[:, k : k + 1] * g
            end = gxp.shape[1] - pad_right
            x._accumulate(gxp[:, pad_left:end])

    return _make(out, (x, w), bw)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment estimates for a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor]):
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(
    params: Sequence[Tensor],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update; every param must carry a gradient."""
    b1, b2 = betas
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError("adam_step: parameter has no gradient")
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(DTYPE)


class Adam:
    """Convenience wrapper pairing a parameter list with its AdamState."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState(self.params)

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
