"""Dense float64 tensors with reverse-mode automatic differentiation.

Every backward rule is itself written with differentiable tensor ops, so
gradients can be differentiated again (needed for the R1 penalty). The
primitive set is closed under differentiation:

    rfft2 <-> irfft2, gather (AxisMap) <-> scatter (its transpose),
    narrow <-> embed, broadcast_to <-> sum_to, matmul -> matmul.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class GraphError(RuntimeError):
    pass


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    prev = is_grad_enabled()
    _state.enabled = mode
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    # a single reduction is cheaper than isfinite().all(); NaN/Inf propagate into it
    if not math.isfinite(data.sum()):
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    out.op = op
    if getattr(_state, "enabled", True) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------- broadcasting


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    return _record(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (sum_to(g, src),), "broadcast_to")


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src = x.shape
    return _record(data, (x,), lambda g: (broadcast_to(g, src),), "sum_to")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)), "sub")


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data / b.data, (a, b), bw, "div")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 1.0:
        return a
    return _record(a.data**p, (a,), lambda g: (mul(g, power(a, p - 1.0) * p),), "power")


def exp(a: Tensor) -> Tensor:
    return _record(np.exp(a.data), (a,), lambda g: (mul(g, exp(a)),), "exp")


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def relu(a: Tensor) -> Tensor:
    pos = (a.data > 0).astype(np.float64)
    return _record(a.data * pos, (a,), lambda g: (mul(g, pos),), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return _record(a.data * scale, (a,), lambda g: (mul(g, scale),), "leaky_relu")


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        st = sigmoid(a) if is_grad_enabled() else Tensor(s)
        return (mul(g, st * (1.0 - st)),)

    return _record(s, (a,), bw, "sigmoid")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, inside),), "clip")


def stop_gradient(a: Tensor) -> Tensor:
    """Forward identity, zero gradient backward."""
    return Tensor(a.data)


sg = stop_gradient


# ---------------------------------------------------------------- reductions and shape


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    src = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def bw(g):
        return (broadcast_to(reshape(g, kept), src),)

    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _record(np.asarray(data), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / n)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    src = a.shape
    data = a.data.reshape(shape)
    if data.shape == src:
        return a
    return _record(data, (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis %= a.ndim
    n = a.shape[axis]
    if start == 0 and stop == n:
        return a
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return _record(a.data[tuple(idx)].copy(), (a,), lambda g: (embed(g, axis, start, n),), "narrow")


def embed(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Place ``a`` at ``start`` inside a zero tensor of extent ``length`` along ``axis``."""
    axis %= a.ndim
    stop = start + a.shape[axis]
    if start == 0 and stop == length:
        return a
    shape = list(a.shape)
    shape[axis] = length
    data = np.zeros(shape)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    data[tuple(idx)] = a.data
    return _record(data, (a,), lambda g: (narrow(g, axis, start, stop),), "embed")


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    if len(ts) == 1:
        return ts[0]
    axis %= ts[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        return tuple(narrow(g, axis, int(bounds[i]), int(bounds[i + 1])) for i in range(len(ts)))

    return _record(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw, "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list:
    out, start = [], 0
    for n in sizes:
        out.append(narrow(a, axis, start, start + n))
        start += n
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = sum_to(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None
        gb = sum_to(matmul(swap_last(a), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(np.matmul(a.data, b.data), (a, b), bw, "matmul")


# ---------------------------------------------------------------- sparse maps along the last axis


class AxisMap:
    """A fixed linear map applied along the last axis: ``y[..., i] = sum_j M[i, j] x[..., j]``.

    Pure gathers (each output reads at most one input with weight 1) run
    through ``np.take``; the transpose is a scatter-add run as a sparse product.
    """

    def __init__(self, matrix: sp.csr_matrix, gather: Optional[np.ndarray] = None):
        self.matrix = matrix.tocsr()
        self.gather = gather
        self._t: Optional[AxisMap] = None

    @classmethod
    def from_index(cls, idx: np.ndarray, n_in: int) -> "AxisMap":
        """Gather map; ``idx[i] = -1`` yields a structural zero."""
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.nonzero(idx >= 0)[0]
        mat = sp.csr_matrix((np.ones(len(rows)), (rows, idx[rows])), shape=(len(idx), n_in))
        return cls(mat, idx if len(rows) == len(idx) else None)

    @property
    def n_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_out(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> "AxisMap":
        if self._t is None:
            self._t = AxisMap(self.matrix.T.tocsr())
            self._t._t = self
        return self._t

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.gather is not None:
            return np.take(x, self.gather, axis=-1)
        lead = x.shape[:-1]
        flat = x.reshape(-1, x.shape[-1])
        out = (self.matrix @ flat.T).T
        return np.ascontiguousarray(out).reshape(lead + (self.n_out,))


def axis_map(a: Tensor, m: AxisMap) -> Tensor:
    if a.shape[-1] != m.n_in:
        raise ValueError(f"axis map expects last extent {m.n_in}, got {a.shape[-1]}")
    return _record(m.apply(a.data), (a,), lambda g: (axis_map(g, m.T),), "axis_map")


# ---------------------------------------------------------------- FFT


def _bin_weights(width: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum."""
    c = np.full(width // 2 + 1, 2.0)
    c[0] = 1.0
    if width % 2 == 0:
        c[-1] = 1.0
    return c


def rfft2(a: Tensor) -> Tensor:
    """Real 2-D FFT over the last two axes, planar output.

    ``(..., C, H, W) -> (..., 2C, H, W//2+1)``: real parts of all channels,
    then imaginary parts. Unnormalized forward transform.
    """
    if a.ndim < 3:
        raise ValueError("rfft2 expects (..., C, H, W)")
    H, W = a.shape[-2:]
    if H < 1 or W < 1:
        raise ValueError("rfft2 needs a nonempty spatial extent")
    f = np.fft.rfft2(a.data, axes=(-2, -1))
    data = np.concatenate([f.real, f.imag], axis=-3)
    inv_c = 1.0 / _bin_weights(W)

    def bw(g):
        return (mul(irfft2(mul(g, inv_c), W), float(H * W)),)

    return _record(data, (a,), bw, "rfft2")


def irfft2(a: Tensor, width: int) -> Tensor:
    """Inverse of :func:`rfft2` with 1/(H*W) normalization; ``width`` fixes the W//2+1 ambiguity."""
    if a.ndim < 3 or a.shape[-3] % 2:
        raise ValueError("irfft2 expects (..., 2C, H, Wf) planar input")
    H, Wf = a.shape[-2:]
    if width < 1 or width // 2 + 1 != Wf:
        raise ValueError(f"output width {width} inconsistent with {Wf} frequency bins")
    C = a.shape[-3] // 2
    z = a.data[..., :C, :, :] + 1j * a.data[..., C:, :, :]
    data = np.fft.irfft2(z, s=(H, width), axes=(-2, -1))
    scale = _bin_weights(width) / (H * width)

    def bw(g):
        return (mul(rfft2(g), scale),)

    return _record(np.ascontiguousarray(data), (a,), bw, "irfft2")


@dataclass
class ComplexTensor:
    """Planar complex tensor: separate differentiable real and imaginary parts."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError("real and imaginary parts must share a shape")

    @property
    def shape(self) -> tuple:
        return self.real.shape

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def rfft2d(t: Tensor) -> ComplexTensor:
    """B x C x H x W -> complex B x C x H x (W//2+1)."""
    if t.ndim != 4:
        raise ValueError("rfft2d expects a B x C x H x W tensor")
    C = t.shape[1]
    f = rfft2(t)
    return ComplexTensor(narrow(f, 1, 0, C), narrow(f, 1, C, 2 * C))


def irfft2d(f: ComplexTensor, out_width: int) -> Tensor:
    return irfft2(concat([f.real, f.imag], axis=1), out_width)


# ---------------------------------------------------------------- convolution


def _reflect(i: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


@lru_cache(maxsize=256)
def _conv_index(H, W, kh, kw, stride, dilation, pad, mode):
    Hp, Wp = H + 2 * pad, W + 2 * pad
    span_h, span_w = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    if span_h > Hp or span_w > Wp:
        raise ValueError(f"kernel {kh}x{kw} (dilation {dilation}) larger than padded input {Hp}x{Wp}")
    if mode == "reflect" and pad >= min(H, W) and pad > 0:
        raise ValueError(f"reflect padding {pad} needs input larger than {pad}, got {H}x{W}")
    Ho = (Hp - span_h) // stride + 1
    Wo = (Wp - span_w) // stride + 1
    ki = np.arange(kh)[:, None, None, None]
    kj = np.arange(kw)[None, :, None, None]
    oh = np.arange(Ho)[None, None, :, None]
    ow = np.arange(Wo)[None, None, None, :]
    ih = oh * stride + ki * dilation - pad
    iw = ow * stride + kj * dilation - pad
    ih, iw = np.broadcast_arrays(ih, iw)
    if mode == "reflect":
        idx = _reflect(ih, H) * W + _reflect(iw, W)
    elif mode == "zero":
        inside = (ih >= 0) & (ih < H) & (iw >= 0) & (iw < W)
        idx = np.where(inside, ih * W + iw, -1)
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    return AxisMap.from_index(idx.reshape(-1), H * W), Ho, Wo


def conv_output_size(n: int, k: int, stride: int = 1, dilation: int = 1, pad: Optional[int] = None) -> int:
    if pad is None:
        pad = dilation * (k - 1) // 2
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "reflect",
    dilation: int = 1,
    pad: Optional[int] = None,
) -> Tensor:
    """2-D cross-correlation, B x C x H x W  *  O x C x kh x kw.

    ``pad`` defaults to the "same" amount ``dilation*(k-1)//2``.
    """
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"kernel expects {Cw} input channels, got {C}")
    if pad is None:
        pad = dilation * (kh - 1) // 2
    if kh == kw == 1 and stride == 1 and pad == 0:
        out = matmul(reshape(w, (O, C)), reshape(x, (B, C, H * W)))
        Ho, Wo = H, W
    else:
        m, Ho, Wo = _conv_index(H, W, kh, kw, stride, dilation, pad, padding)
        cols = axis_map(reshape(x, (B, C, H * W)), m)
        cols = reshape(cols, (B, C * kh * kw, Ho * Wo))
        out = matmul(reshape(w, (O, C * kh * kw)), cols)
    out = reshape(out, (B, O, Ho, Wo))
    if bias is not None:
        out = add(out, reshape(bias, (1, O, 1, 1)))
    return out


@lru_cache(maxsize=64)
def _upsample_index(H, W, factor):
    oh = np.arange(H * factor) // factor
    ow = np.arange(W * factor) // factor
    return AxisMap.from_index((oh[:, None] * W + ow[None, :]).reshape(-1), H * W)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    y = axis_map(reshape(x, (B, C, H * W)), _upsample_index(H, W, factor))
    return reshape(y, (B, C, H * factor, W * factor))


# ---------------------------------------------------------------- batch norm


class BatchNormState:
    """Running statistics for one batch-norm site (momentum 0.1, unbiased variance)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def _bn_normalize(x: Tensor, eps: float) -> tuple:
    """Per-channel standardization over (B, H, W); returns (xhat, mean, biased var)."""
    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        if is_grad_enabled():
            # differentiable form, used when building a graph of the gradient
            m = mean(x, axis=axes, keepdims=True)
            c = sub(x, m)
            iv = power(add(mean(mul(c, c), axis=axes, keepdims=True), eps), -0.5)
            xh = mul(c, iv)
            gm = mean(g, axis=axes, keepdims=True)
            gxm = mean(mul(g, xh), axis=axes, keepdims=True)
            return (mul(iv, sub(sub(g, gm), mul(xh, gxm))),)
        gd = g.data
        gm = gd.mean(axis=axes, keepdims=True)
        gxm = (gd * xhat).mean(axis=axes, keepdims=True)
        return (Tensor(inv * (gd - gm - xhat * gxm)),)

    return _record(xhat, (x,), bw, "batchnorm"), mu, var


def batchnorm2d(x: Tensor, gamma: Optional[Tensor], beta: Optional[Tensor], state: BatchNormState, training: bool = True) -> Tensor:
    C = x.shape[1]
    view = (1, C, 1, 1)
    if training:
        y, mu, var = _bn_normalize(x, state.eps)
        n = x.size // C
        m = state.momentum
        unbiased = var.reshape(C) * (n / max(n - 1, 1))
        state.running_mean = (1 - m) * state.running_mean + m * mu.reshape(C)
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        y = mul(sub(x, state.running_mean.reshape(view)), inv.reshape(view))
    if gamma is not None:
        y = mul(y, reshape(gamma, view))
    if beta is not None:
        y = add(y, reshape(beta, view))
    return y


# ---------------------------------------------------------------- backward


def _topo(root: Tensor) -> list:
    """Reverse-topological order of grad-requiring nodes reachable from ``root``."""
    order, done, active = [], set(), set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            active.discard(key)
            done.add(key)
            order.append(node)
            continue
        if key in done:
            continue
        if key in active:
            raise GraphError("cycle detected in computation graph")
        active.add(key)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                pk = id(p)
                if pk in active:
                    raise GraphError("cycle detected in computation graph")
                if pk not in done:
                    stack.append((p, False))
    order.reverse()
    return order


def _run_backward(root: Tensor, create_graph: bool, want: Optional[set] = None) -> dict:
    """Propagate from ``root``; return {id: (node, grad)} for leaves, or for ids in ``want``."""
    grads = {id(root): Tensor(np.ones(root.shape))}
    found = {}
    with set_grad_enabled(create_graph):
        for node in _topo(root):
            key = id(node)
            g = grads.pop(key, None)
            if g is None:
                continue
            if (node._backward is None) if want is None else (key in want):
                found[key] = (node, g)
            if node._backward is None:
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = add(grads[k], gp) if k in grads else gp
    return found


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list:
    """Gradients of scalar ``output`` w.r.t. ``inputs``; unreachable inputs get zeros."""
    if output.size != 1:
        raise GraphError("grad needs a scalar output")
    if not output.requires_grad:
        return [Tensor(np.zeros(t.shape)) for t in inputs]
    seen = _run_backward(output, create_graph, {id(t) for t in inputs})
    out = []
    for t in inputs:
        hit = seen.get(id(t))
        out.append(hit[1] if hit is not None else Tensor(np.zeros(t.shape)))
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
    if root.size != 1:
        raise GraphError("backward needs a scalar root")
    if not root.requires_grad:
        return
    for node, g in _run_backward(root, False).values():
        node.grad = g.data.copy() if node.grad is None else node.grad + g.data
