"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a tensor that records its inputs and a gradient
closure; those records are the computation graph. ``backward`` on a scalar
replays the closures in reverse topological order and accumulates into
``Tensor.grad``, summing naturally when a tensor fans out into several
consumers. Execution is single threaded and deterministic: identical
inputs rebuild an identical graph and produce bit-identical values and
gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ShapeError

Array = np.ndarray


class Tensor:
    """Row-major float64 array plus an optional gradient slot.

    ``requires_grad`` marks leaves that want gradients; any tensor derived
    from one inherits the flag. ``grad`` stays ``None`` until ``backward``
    reaches the tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericalError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------

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
        return mul(self, _as_tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor division is only supported by scalars")
        return mul(self, _as_tensor(1.0 / float(other)))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: Array, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    rg = any(p.requires_grad for p in parents)
    out.requires_grad = rg
    out._parents = parents if rg else ()
    out._grad_fn = grad_fn if rg else None
    return out


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` tensor.

    ``loss`` must hold a single element. The graph is walked once in
    reverse topological order, so shared subexpressions receive the sum of
    all downstream contributions.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)


# -- elementwise arithmetic ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def gf(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), gf)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def gf(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), gf)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def gf(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), gf)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericalError("log requires strictly positive input")
    out = np.log(x.data)

    def gf(g):
        _accum(x, g / x.data)

    return _make(out, (x,), gf)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where unclamped."""
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def gf(g):
        _accum(x, g * mask)

    return _make(out, (x,), gf)


# -- reductions ------------------------------------------------------------


def _reduce_sum(x: Tensor, axis, keepdims: bool) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def gf(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape))

    return _make(np.asarray(out), (x,), gf)


def _reduce_mean(x: Tensor, axis, keepdims: bool) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / np.asarray(out).size

    def gf(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape) / count)

    return _make(np.asarray(out), (x,), gf)


# -- structural ops --------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def gf(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(out, (x,), gf)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def gf(g):
        _accum(x, np.transpose(g, inv))

    return _make(out, (x,), gf)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def gf(g):
        for t, s0, s1 in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(s0), int(s1))
                _accum(t, g[tuple(idx)])

    return _make(out, tuple(tensors), gf)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with leading batch dimensions broadcast numpy-style."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def gf(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _make(out, (a, b), gf)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with OIHW kernels.

    The padded extents must cover the kernel and the strided output extent
    must be integral; anything else raises ShapeError. Implemented as an
    explicit im2col + matrix product so both passes reduce over the same
    ordered axis regardless of batch size.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    b, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d bias must have shape ({o},), got {bias.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ShapeError(
            f"non-integral output extent for input {h}x{wd}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T                                   # (b, ho*wo, o)
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(b, o, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def gf(g):
        gm = np.ascontiguousarray(g.reshape(b, o, ho * wo).transpose(0, 2, 1))
        if w.requires_grad:
            _accum(w, np.einsum("bpo,bpk->ok", gm, cols, optimize=True).reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = gm @ wmat                              # (b, ho*wo, c*kh*kw)
            dwin = dcols.reshape(b, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride] += dwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accum(x, dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, gf)


# -- activations -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def gf(g):
        _accum(x, g * mask)

    return _make(out, (x,), gf)


def sigmoid(x: Tensor) -> Tensor:
    # Piecewise form avoids exp overflow for large negative inputs.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def gf(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), gf)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along one axis, stabilised by max subtraction."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def gf(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return _make(out, (x,), gf)


# -- normalisation ------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes must be ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def gf(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (dxhat - m1 - xhat * m2) * inv)

    return _make(out, (x, gamma, beta), gf)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: Array, running_var: Array,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (batch, height, width) of NCHW input.

    Training mode normalises with biased batch statistics and folds them
    into the running buffers in place: run = (1 - momentum) * run +
    momentum * batch. Eval mode normalises with the buffers, so a freshly
    initialised model sees mean 0 / var 1.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d affine shapes must be ({c},), got {gamma.shape}, {beta.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batch_norm2d running stats must have shape ({c},)")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
    else:
        mu = running_mean
        var = running_var
    inv = (1.0 / np.sqrt(var + eps))[None, :, None, None]
    xhat = (x.data - mu[None, :, None, None]) * inv
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def gf(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                _accum(x, (dxhat - m1 - xhat * m2) * inv)
            else:
                _accum(x, dxhat * inv)

    return _make(out, (x, gamma, beta), gf)


# -- spatial resampling --------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """NCHW -> NC mean over the spatial axes."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def gf(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    return _make(out, (x,), gf)


def resize_nearest(x: Tensor, factor: int) -> Tensor:
    """Upsample NCHW spatially by an integer factor, replicating blocks."""
    if x.ndim != 4:
        raise ShapeError(f"resize_nearest expects NCHW input, got {x.shape}")
    if int(factor) != factor or factor < 1:
        raise ShapeError(f"resize_nearest factor must be a positive integer, got {factor}")
    f = int(factor)
    if f == 1:
        ident = x.data

        def gf1(g):
            _accum(x, g)

        return _make(ident, (x,), gf1)
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def gf(g):
        _accum(x, g.reshape(b, c, h, f, w, f).sum(axis=(3, 5)))

    return _make(out, (x,), gf)


def downsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Keep the top-left sample of each factor x factor block of NCHW input."""
    if x.ndim != 4:
        raise ShapeError(f"downsample_nearest expects NCHW input, got {x.shape}")
    f = int(factor)
    if f != factor or f < 1:
        raise ShapeError(f"downsample_nearest factor must be a positive integer, got {factor}")
    b, c, h, w = x.shape
    if h % f or w % f:
        raise ShapeError(f"downsample_nearest factor {f} must divide spatial extents {h}x{w}")
    out = np.ascontiguousarray(x.data[:, :, ::f, ::f])

    def gf(g):
        dx = np.zeros_like(x.data)
        dx[:, :, ::f, ::f] = g
        _accum(x, dx)

    return _make(out, (x,), gf)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Mean over non-overlapping factor x factor blocks of NCHW input."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects NCHW input, got {x.shape}")
    f = int(factor)
    if f != factor or f < 1:
        raise ShapeError(f"avg_pool2d factor must be a positive integer, got {factor}")
    b, c, h, w = x.shape
    if h % f or w % f:
        raise ShapeError(f"avg_pool2d factor {f} must divide spatial extents {h}x{w}")
    out = x.data.reshape(b, c, h // f, f, w // f, f).mean(axis=(3, 5))

    def gf(g):
        _accum(x, np.repeat(np.repeat(g, f, axis=2), f, axis=3) / (f * f))

    return _make(out, (x,), gf)
