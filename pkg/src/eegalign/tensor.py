"""Dense tensor with reverse-mode automatic differentiation.

The computation graph is implicit: every non-leaf Tensor keeps a tuple of
parent Tensors and a backward closure. ``backward()`` on a scalar walks the
graph in reverse topological order exactly once and accumulates gradients
into every tensor that requires them. Repeated backward calls without
``zero_grad`` accumulate, matching the usual autograd contract.

Only f32 and f64 are supported. A single graph must be dtype-uniform;
mixing dtypes in one op raises ContractError. All reductions use numpy's
deterministic kernels, so two executions of the same graph produce
bit-identical outputs and gradients regardless of thread environment.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import ContractError, DimensionError, NumericDomainError
from .seeding import derive_rng

DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_F32 = np.float32
_F64 = np.float64


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        arr = data
    else:
        arr = np.asarray(data, dtype=np.float32 if dtype is None else dtype)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if arr.dtype not in (np.dtype(_F32), np.dtype(_F64)):
        arr = arr.astype(_F32)
    return np.ascontiguousarray(arr)


class Tensor:
    """n-dimensional float array, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        # Constants are pruned from the graph: no parents, no backward.
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward_fn = None
        out._op = op
        return out

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype_name(self) -> str:
        return DTYPE_NAMES[self.data.dtype]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.dtype_name}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------------

    def backward(self):
        """Populate grads of every reachable tensor with d(self)/d(tensor)."""
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {tuple(self.shape)}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, c: float):
        return scale(self, 1.0 / float(c))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=_F32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=_F32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def randn(shape, rng: np.random.Generator, std: float = 1.0, dtype=_F32,
          requires_grad: bool = False) -> Tensor:
    data = (rng.standard_normal(shape) * std).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)


def _check_same_dtype(*ts: Tensor):
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ContractError(
                "dtype must be uniform within a graph: "
                f"{DTYPE_NAMES[dt]} vs {DTYPE_NAMES[t.data.dtype]}"
            )


# -- arithmetic -----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. Also accepts a trailing-axis bias: (..., N) + (N,)."""
    _check_same_dtype(a, b)
    bias_mode = b.data.ndim == 1 and a.data.ndim > 1 and a.shape[-1] == b.shape[0]
    if not bias_mode and a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    out = Tensor._result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(g.reshape(-1, b.shape[0]).sum(axis=0) if bias_mode else g)
        out._backward_fn = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    out = Tensor._result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g * b.data)
            if b.requires_grad:
                b._accum(g * a.data)
        out._backward_fn = _bw
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._result(x.data * x.data.dtype.type(c), (x,), "scale")
    if out.requires_grad:
        out._backward_fn = lambda g: x._accum(g * x.data.dtype.type(c))
    return out


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a scalar tensor (used for a learnable temperature)."""
    _check_same_dtype(x, s)
    if s.data.size != 1:
        raise DimensionError(f"scale_by expects a scalar tensor, got {tuple(s.shape)}")
    sval = s.data.reshape(())
    out = Tensor._result(x.data * sval, (x, s), "scale_by")
    if out.requires_grad:
        def _bw(g):
            if x.requires_grad:
                x._accum(g * sval)
            if s.requires_grad:
                s._accum(np.sum(g * x.data).reshape(s.shape).astype(s.data.dtype))
        out._backward_fn = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul needs (M,K)x(K,N), got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    out = Tensor._result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)
        out._backward_fn = _bw
    return out


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects 2D, got {tuple(x.shape)}")
    out = Tensor._result(np.ascontiguousarray(x.data.T), (x,), "transpose")
    if out.requires_grad:
        out._backward_fn = lambda g: x._accum(np.ascontiguousarray(g.T))
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor._result(np.ascontiguousarray(x.data.reshape(shape)), (x,), "reshape")
    if out.requires_grad:
        out._backward_fn = lambda g: x._accum(g.reshape(x.shape))
    return out


# -- reductions -------------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor._result(np.asarray(out_data, dtype=x.data.dtype), (x,), "sum")
    if out.requires_grad:
        def _bw(g):
            if axis is None:
                gg = g.reshape(())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
            x._accum(np.broadcast_to(gg, x.shape).astype(x.data.dtype, copy=True))
        out._backward_fn = _bw
    return out


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- activations / pointwise ------------------------------------------------------


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    d = x.data
    neg = alpha * np.expm1(np.minimum(d, 0))
    out_data = np.where(d > 0, d, neg).astype(d.dtype)
    out = Tensor._result(out_data, (x,), "elu")
    if out.requires_grad:
        deriv = np.where(d > 0, 1.0, neg + alpha).astype(d.dtype)
        out._backward_fn = lambda g: x._accum(g * deriv)
    return out


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    d = x.data
    cdf = 0.5 * (1.0 + special.erf(d * _INV_SQRT2))
    out = Tensor._result((d * cdf).astype(d.dtype), (x,), "gelu")
    if out.requires_grad:
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
        deriv = (cdf + d * pdf).astype(d.dtype)
        out._backward_fn = lambda g: x._accum(g * deriv)
    return out


def texp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    out = Tensor._result(out_data, (x,), "exp")
    if out.requires_grad:
        out._backward_fn = lambda g: x._accum(g * out_data)
    return out


def tlog(x: Tensor, eps: Optional[float] = None) -> Tensor:
    d = x.data
    if eps is None:
        if np.any(d <= 0):
            raise NumericDomainError("log of non-positive value (no epsilon guard configured)")
        clipped = d
    else:
        clipped = np.maximum(d, eps)
    out = Tensor._result(np.log(clipped).astype(d.dtype), (x,), "log")
    if out.requires_grad:
        deriv = np.where(clipped == d, 1.0 / clipped, 0.0).astype(d.dtype) \
            if eps is not None else (1.0 / d).astype(d.dtype)
        out._backward_fn = lambda g: x._accum(g * deriv)
    return out


def dropout(x: Tensor, p: float, seed: int) -> Tensor:
    """Inverted dropout; identity when p == 0, deterministic under a fixed seed."""
    if not (0.0 <= p < 1.0):
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return scale(x, 1.0)
    rng = derive_rng(seed)
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype)
    mask = keep / x.data.dtype.type(1.0 - p)
    out = Tensor._result(x.data * mask, (x,), "dropout")
    if out.requires_grad:
        out._backward_fn = lambda g: x._accum(g * mask)
    return out


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rows (along ``axis``) scaled to unit Euclidean norm, epsilon-guarded."""
    d = x.data
    s = np.sum(d * d, axis=axis, keepdims=True)
    r = np.sqrt(s + eps)
    out_data = (d / r).astype(d.dtype)
    out = Tensor._result(out_data, (x,), "l2_normalize")
    if out.requires_grad:
        r3 = r * r * r
        out._backward_fn = lambda g: x._accum(
            (g / r - d * (np.sum(g * d, axis=axis, keepdims=True) / r3)).astype(d.dtype)
        )
    return out


def logsumexp(x: Tensor, axis: int) -> Tensor:
    """Numerically stable log-sum-exp reduction along one axis."""
    d = x.data
    m = np.max(d, axis=axis, keepdims=True)
    z = np.exp(d - m)
    total = np.sum(z, axis=axis, keepdims=True)
    out_keep = m + np.log(total)
    out = Tensor._result(np.squeeze(out_keep, axis=axis).astype(d.dtype), (x,), "logsumexp")
    if out.requires_grad:
        softmax = z / total
        out._backward_fn = lambda g: x._accum(
            (np.expand_dims(g, axis) * softmax).astype(d.dtype)
        )
    return out


def diagonal(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"diagonal expects a square matrix, got {tuple(x.shape)}")
    out = Tensor._result(np.ascontiguousarray(np.diagonal(x.data)), (x,), "diagonal")
    if out.requires_grad:
        def _bw(g):
            gx = np.zeros_like(x.data)
            np.fill_diagonal(gx, g)
            x._accum(gx)
        out._backward_fn = _bw
    return out


# -- convolution and pooling -------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    b, c, hp, wp = xp.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (b, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * sh, s3 * sw)
    )
    return view.reshape(b, c * kh * kw, ho * wo), ho, wo


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
           stride: Union[int, tuple] = 1, padding: Union[int, tuple] = 0) -> Tensor:
    """Cross-correlation of NCHW input with (Cout, Cin, kh, kw) kernels."""
    _check_same_dtype(x, w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4D input and kernel, got {tuple(x.shape)} and {tuple(w.shape)}"
        )
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {tuple(x.shape)} vs kernel {tuple(w.shape)}"
        )
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    b, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    if kh > h + 2 * ph or kw > wdt + 2 * pw:
        raise DimensionError(
            f"kernel ({kh}x{kw}) larger than padded input ({h + 2 * ph}x{wdt + 2 * pw})"
        )
    xp = np.zeros((b, cin, h + 2 * ph, wdt + 2 * pw), dtype=x.data.dtype)
    xp[:, :, ph:ph + h, pw:pw + wdt] = x.data
    cols, ho, wo = _im2col(xp, kh, kw, sh, sw)
    w2 = w.data.reshape(cout, cin * kh * kw)
    out_data = np.matmul(w2, cols).reshape(b, cout, ho, wo)
    if bias is not None:
        _check_same_dtype(x, bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d bias must be ({cout},), got {tuple(bias.shape)}")
        out_data = out_data + bias.data.reshape(1, cout, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)
    out = Tensor._result(out_data, parents, "conv2d")
    if out.requires_grad:
        def _bw(g):
            g2 = g.reshape(b, cout, ho * wo)
            if w.requires_grad:
                dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
                w._accum(dw.reshape(w.shape))
            if bias is not None and bias.requires_grad:
                bias._accum(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dcols = np.matmul(w2.T, g2).reshape(b, cin, kh, kw, ho, wo)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[:, :, i, j]
                x._accum(dxp[:, :, ph:ph + h, pw:pw + wdt])
        out._backward_fn = _bw
    return out


def avg_pool(x: Tensor, width: int, stride: Optional[int] = None) -> Tensor:
    """Mean pooling along the last axis (the time axis in this codebase)."""
    if width < 1:
        raise ContractError(f"pool width must be >= 1, got {width}")
    t = x.shape[-1]
    if width > t:
        raise DimensionError(f"pool width {width} exceeds axis length {t}")
    s = width if stride is None else stride
    n_out = (t - width) // s + 1
    starts = s * np.arange(n_out)
    acc = np.zeros(x.shape[:-1] + (n_out,), dtype=x.data.dtype)
    for i in range(width):
        acc += x.data[..., starts + i]
    out = Tensor._result(acc / x.data.dtype.type(width), (x,), "avg_pool")
    if out.requires_grad:
        def _bw(g):
            gx = np.zeros_like(x.data)
            gw = g / x.data.dtype.type(width)
            for i in range(width):
                gx[..., starts + i] += gw
            x._accum(gx)
        out._backward_fn = _bw
    return out
