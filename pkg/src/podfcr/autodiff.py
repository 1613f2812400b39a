"""Reverse-mode autodiff over dense float64 numpy arrays.

Every operation records a closure on a single-use tape; ``Tensor.backward()``
walks the tape in reverse topological order and accumulates gradients into
every tensor that requires them. Network tensors are NCHW rank-4, but the
engine itself is shape-agnostic so attention code can work on flattened
matrix views. Convolutions gather sliding patches with stride tricks and
reduce them with ``tensordot``; the quadruple-loop definition lives in the
test suite as the reference oracle.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation / inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    """An operand's shape violates the operator contract."""


class GraphError(RuntimeError):
    """backward() called on a non-scalar root or an already-consumed graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

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
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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
        return scale(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        """Backpropagate from a scalar loss; the graph is single-use."""
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise GraphError("graph already consumed; rerun the forward pass before calling backward() again")

        topo: list[Tensor] = []
        visited = {id(self)}
        stack: list[tuple[Tensor, iter]] = [(self, iter(self._parents))]
        while stack:
            node, it = stack[-1]
            pushed = False
            for p in it:
                if id(p) not in visited:
                    visited.add(id(p))
                    stack.append((p, iter(p._parents)))
                    pushed = True
                    break
            if not pushed:
                topo.append(node)
                stack.pop()

        self.grad = np.ones_like(self.data)
        self._consumed = True
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # release the tape as we go; keep leaf grads
            node._backward = None
            node._parents = ()
            if not node.requires_grad:
                node.grad = None
            elif node is not self and node._op != "leaf":
                node._consumed = True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g if g.base is None and g.dtype == np.float64 else np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _node(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    else:
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), bw, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * c)

    return _node(a.data * c, (a,), bw, "scale")


def absolute(a) -> Tensor:
    """|x|; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), bw, "abs")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * (0.5 / out_data))

    return _node(out_data, (a,), bw, "sqrt")


def relu(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0.0))

    return _node(np.maximum(a.data, 0.0), (a,), bw, "relu")


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    """LeakyReLU; the subgradient at 0 takes the negative-slope branch."""
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * np.where(a.data > 0.0, 1.0, alpha))

    return _node(np.where(a.data > 0.0, a.data, alpha * a.data), (a,), bw, "leaky_relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            _accum(a, g * s * (1.0 - s))

    return _node(s, (a,), bw, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - t * t))

    return _node(t, (a,), bw, "tanh")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = (axis,) if isinstance(axis, int) else axis

    def bw(g):
        if not a.requires_grad:
            return
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _node(a.data.sum(axis=ax, keepdims=keepdims), (a,), bw, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = (axis,) if isinstance(axis, int) else axis
    if ax is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[i] for i in ax]))

    def bw(g):
        if not a.requires_grad:
            return
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        _accum(a, np.broadcast_to(g / count, a.shape).copy())

    return _node(a.data.mean(axis=ax, keepdims=keepdims), (a,), bw, "mean")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def bw(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        if a.requires_grad:
            _accum(a, g.transpose(inv))

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw, "transpose")


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, np.ascontiguousarray(g[tuple(idx)]))

    return _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw, "concat")


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` is a per-axis (before, after) sequence."""
    a = as_tensor(a)
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)

    def bw(g):
        if a.requires_grad:
            idx = tuple(slice(lo, g.shape[i] - hi) for i, (lo, hi) in enumerate(widths))
            _accum(a, np.ascontiguousarray(g[idx]))

    return _node(np.pad(a.data, widths), (a,), bw, "pad")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))

    return _node(np.broadcast_to(a.data, shape).copy(), (a,), bw, "broadcast_to")


# ---------------------------------------------------------------------------
# matmul / softmax
# ---------------------------------------------------------------------------

def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast (np.matmul semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least rank 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(_swap_last(a.data), g), b.shape))

    return _node(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stochastic softmax with max subtraction for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node(y, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# convolution machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    """Shape contract for a convolution: the output extent formula
    H_out = (H + 2·pad − dilation·(kh−1) − 1) // stride + 1 must hold."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ho = (h + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        wo = (w + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        return ho, wo


def conv_out_size(h: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    out[:, :, p:p + h, p:p + w] = x
    return out


def _patch_view(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
                ho: int, wo: int) -> np.ndarray:
    """Strided view (N, C, kh, kw, Ho, Wo) over a padded NCHW array."""
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    shape = (n, c, kh, kw, ho, wo)
    strides = (s0, s1, s2 * dilation, s3 * dilation, s2 * stride, s3 * stride)
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int, dilation: int) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    ho = conv_out_size(x.shape[2], kh, stride, pad, dilation)
    wo = conv_out_size(x.shape[3], kw, stride, pad, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv: kernel {kh}x{kw} (dilation {dilation}) does not fit input {x.shape}")
    cols = _patch_view(_pad_hw(x, pad), kh, kw, stride, dilation, ho, wo)
    y = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))  # (Co, N, Ho, Wo)
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def _conv_dw(x: np.ndarray, dy: np.ndarray, kh: int, kw: int, stride: int,
             pad: int, dilation: int) -> np.ndarray:
    ho, wo = dy.shape[2], dy.shape[3]
    cols = _patch_view(_pad_hw(x, pad), kh, kw, stride, dilation, ho, wo)
    return np.tensordot(dy, cols, axes=([0, 2, 3], [0, 4, 5]))  # (Co, C, kh, kw)


def _conv_dx(dy: np.ndarray, w: np.ndarray, xh: int, xw: int, stride: int,
             pad: int, dilation: int) -> np.ndarray:
    """Adjoint of _conv_fwd: scatter dy back through the kernel taps.

    For stride 1 the scatter collapses to one correlation with the kernel
    flipped and its channel axes swapped, which is a single GEMM.
    """
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    flip_pad = dilation * (kh - 1) - pad
    if stride == 1 and kh == kw and flip_pad >= 0:
        w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = _conv_fwd(dy, w_flip, 1, flip_pad, dilation)
        if dx.shape[2] != xh or dx.shape[3] != xw:
            raise ShapeError(f"conv backward: expected ({xh},{xw}), got {dx.shape}")
        return dx
    n = dy.shape[0]
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros((n, cin, xh + 2 * pad, xw + 2 * pad))
    tmp = np.tensordot(dy, w, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
    tmp = tmp.transpose(0, 3, 4, 5, 1, 2)       # (N, C, kh, kw, Ho, Wo)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u * dilation:u * dilation + ho * stride:stride,
                v * dilation:v * dilation + wo * stride:stride] += tmp[:, :, u, v]
    if pad == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, :, pad:pad + xh, pad:pad + xw])


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation of NCHW input with (C_out, C_in, kh, kw) weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW rank 4, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4 (C_out, C_in, kh, kw), got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    bias = as_tensor(bias) if bias is not None else None
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {weight.shape[0]} output channels")

    y = _conv_fwd(x.data, weight.data, stride, padding, dilation)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    kh, kw = weight.shape[2], weight.shape[3]

    def bw(g):
        if x.requires_grad:
            _accum(x, _conv_dx(g, weight.data, x.shape[2], x.shape[3], stride, padding, dilation))
        if weight.requires_grad:
            _accum(weight, _conv_dw(x.data, g, kh, kw, stride, padding, dilation))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(y, parents, bw, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0,
                     dilation: int = 1) -> Tensor:
    """Transposed convolution, the exact adjoint of conv2d with shared weights.

    Weights are (C_in, C_out, kh, kw); output extent is
    (H-1)*stride - 2*padding + dilation*(kh-1) + 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d: input must be NCHW rank 4, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d: weight must be rank 4 (C_in, C_out, kh, kw), got {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: input has {x.shape[1]} channels but weight expects {weight.shape[0]}")
    bias = as_tensor(bias) if bias is not None else None
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"conv_transpose2d: bias shape {bias.shape} does not match {weight.shape[1]} output channels")

    kh, kw = weight.shape[2], weight.shape[3]
    ho = (x.shape[2] - 1) * stride - 2 * padding + dilation * (kh - 1) + 1
    wo = (x.shape[3] - 1) * stride - 2 * padding + dilation * (kw - 1) + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv_transpose2d: output extent {ho}x{wo} is not positive")
    y = _conv_dx(x.data, weight.data, ho, wo, stride, padding, dilation)
    if bias is not None:
        y = y + bias.data[None, :, None, None]

    def bw(g):
        if x.requires_grad:
            _accum(x, _conv_fwd(g, weight.data, stride, padding, dilation))
        if weight.requires_grad:
            _accum(weight, _conv_dw(g, x.data, kh, kw, stride, padding, dilation))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(y, parents, bw, "conv_transpose2d")


def unfold(x, kernel: int = 3, padding: int = 1) -> Tensor:
    """Sliding k*k patches of an NCHW tensor as (N, C, k*k, H_out, W_out)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"unfold: input must be NCHW rank 4, got shape {x.shape}")
    k = int(kernel)
    ho = conv_out_size(x.shape[2], k, 1, padding, 1)
    wo = conv_out_size(x.shape[3], k, 1, padding, 1)
    cols = _patch_view(_pad_hw(x.data, padding), k, k, 1, 1, ho, wo)
    n, c = x.shape[0], x.shape[1]
    out = np.ascontiguousarray(cols).reshape(n, c, k * k, ho, wo)

    def bw(g):
        if not x.requires_grad:
            return
        gp = np.zeros((n, c, x.shape[2] + 2 * padding, x.shape[3] + 2 * padding))
        g = g.reshape(n, c, k, k, ho, wo)
        for u in range(k):
            for v in range(k):
                gp[:, :, u:u + ho, v:v + wo] += g[:, :, u, v]
        if padding:
            gp = gp[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]]
        _accum(x, np.ascontiguousarray(gp))

    return _node(out, (x,), bw, "unfold")


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def avg_pool2d(x, kernel: int, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: input must be NCHW rank 4, got shape {x.shape}")
    k = int(kernel)
    s = k if stride is None else int(stride)
    ho = conv_out_size(x.shape[2], k, s, 0, 1)
    wo = conv_out_size(x.shape[3], k, s, 0, 1)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"avg_pool2d: window {k} does not fit input {x.shape}")
    cols = _patch_view(x.data, k, k, s, 1, ho, wo)
    out = cols.mean(axis=(2, 3))

    def bw(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        gshare = g / (k * k)
        for u in range(k):
            for v in range(k):
                gx[:, :, u:u + ho * s:s, v:v + wo * s:s] += gshare
        _accum(x, gx)

    return _node(out, (x,), bw, "avg_pool2d")


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be NCHW rank 4, got shape {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def bw(g):
        if x.requires_grad:
            _accum(x, np.broadcast_to(g / hw, x.shape).copy())

    return _node(out, (x,), bw, "global_avg_pool")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (N, H, W); running stats update in place.

    Training mode normalizes with the biased batch variance and folds the
    batch statistics into the running buffers; eval mode uses the buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: input must be NCHW rank 4, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")
    g4 = reshape(gamma, (1, c, 1, 1))
    b4 = reshape(beta, (1, c, 1, 1))
    if training:
        m = tmean(x, axis=(0, 2, 3), keepdims=True)
        centered = sub(x, m)
        var = tmean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        xhat = div(centered, sqrt(add(var, eps)))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbias = n / (n - 1) if n > 1 else 1.0
        running_mean *= 1.0 - momentum
        running_mean += momentum * m.data.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * unbias * var.data.reshape(c)
    else:
        rm = Tensor(running_mean.reshape(1, c, 1, 1).copy())
        rv = Tensor(running_var.reshape(1, c, 1, 1).copy())
        xhat = div(sub(x, rm), sqrt(add(rv, eps)))
    return add(mul(g4, xhat), b4)


def assert_finite(t: Tensor, name: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in {name} (op={t._op})")


def first_nonfinite_op(root: Tensor) -> str | None:
    """Name of the earliest op (forward order) whose output is non-finite."""
    topo: list[Tensor] = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for p in it:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                pushed = True
                break
        if not pushed:
            topo.append(node)
            stack.pop()
    for node in topo:
        if not np.all(np.isfinite(node.data)):
            return "leaf (parameter or input)" if node._op == "leaf" else node._op
    return None
