"""Dense float64 tensors with reverse-mode autodiff, plus counter-based random streams.

Everything downstream (scans, experts, decoder, training) is built on the ops in
this module. Design constraints:

* float64 only; any non-finite value produced by an op raises ``NumericError``
  immediately instead of propagating.
* first-order gradients via a reverse-mode tape; ``backward`` accumulates into
  leaf ``grad`` buffers until ``zero_grad`` is called.
* a graph instance is single-threaded; tensors without a tape are immutable
  values and safe to share across threads.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor", "Rng", "TensorError", "ShapeError", "NumericError", "no_grad",
    "matmul", "softmax", "log_softmax", "depthwise_conv", "conv2d", "affine",
    "global_pool", "backward", "compute_grads",
    "add", "sub", "mul", "div", "neg",
    "exp", "log", "absolute", "sigmoid", "tanh", "silu", "gelu", "softplus",
    "sum_", "mean_", "reshape", "transpose", "concat", "stack", "take",
    "zeros", "ones", "full",
]

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class TensorError(Exception):
    """Base error for tensor operations."""


class ShapeError(TensorError):
    """Operand shapes do not satisfy an operation's contract."""


class NumericError(TensorError):
    """An operation produced (or was handed) a NaN or Inf."""


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def _check_finite(arr: np.ndarray, what: str) -> None:
    # single-pass fast path: a finite sum proves all entries finite; a
    # non-finite sum can also mean benign overflow, so confirm precisely
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(arr.sum()):
            return
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that skips tape construction (inference passes)."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class Tensor:
    """N-dimensional float64 array with optional participation in the tape.

    ``_parents`` / ``_vjp`` form the reverse-mode graph: ``_vjp(g)`` maps the
    output gradient to one gradient array per parent (or None).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_array(data)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...],
                 vjp: Callable[[np.ndarray], tuple], op: str,
                 check: bool = True) -> "Tensor":
        # ops that only move values (gather, reshape, concat) pass check=False:
        # their inputs were validated on creation and no new values appear
        if check:
            _check_finite(data, f"result of {op}")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = (_GradMode.enabled
                             and any(p.requires_grad for p in parents))
        out.grad = None
        if out.requires_grad:
            out._parents = parents
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    # -- basic properties ----------------------------------------------

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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_ensure(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_ensure(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def _raise_scalar(t: Tensor):
    raise ShapeError(f"expected scalar tensor, got shape {t.shape}")


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary ops ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.shape)
              if b.requires_grad else None)
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    return Tensor._from_op(out_data, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    a = _ensure(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


# -- elementwise unary ops ------------------------------------------------

def exp(x: Tensor) -> Tensor:
    x = _ensure(x)
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)
    return Tensor._from_op(out_data, (x,), lambda g: (g * out_data,), "exp")


def log(x: Tensor) -> Tensor:
    x = _ensure(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)
    return Tensor._from_op(out_data, (x,), lambda g: (g / x.data,), "log")


def absolute(x: Tensor) -> Tensor:
    x = _ensure(x)
    return Tensor._from_op(np.abs(x.data), (x,),
                           lambda g: (g * np.sign(x.data),), "abs")


def sigmoid(x: Tensor) -> Tensor:
    x = _ensure(x)
    s = _sigmoid_np(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    # exp only on the negative side to avoid overflow
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(x: Tensor) -> Tensor:
    x = _ensure(x)
    t = np.tanh(x.data)
    return Tensor._from_op(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), the smooth gate activation."""
    x = _ensure(x)
    s = _sigmoid_np(x.data)
    out_data = x.data * s

    def vjp(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return Tensor._from_op(out_data, (x,), vjp, "silu")


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = _ensure(x)
    e = _erf(x.data * _INV_SQRT2)
    out_data = 0.5 * x.data * (1.0 + e)

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (0.5 * (1.0 + e) + x.data * pdf),)

    return Tensor._from_op(out_data, (x,), vjp, "gelu")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) computed without overflow; output strictly positive."""
    x = _ensure(x)
    out_data = np.logaddexp(0.0, x.data)
    s = _sigmoid_np(x.data)
    return Tensor._from_op(out_data, (x,), lambda g: (g * s,), "softplus")


# -- reductions -----------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, (int, np.integer)):
        axis = (int(axis),)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    axis = _norm_axis(axis, x.ndim)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out_data), (x,), vjp, "sum")


def mean_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    naxis = _norm_axis(axis, x.ndim)
    if naxis is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[a] for a in naxis]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Exponential normalization along ``axis`` with max-subtraction."""
    x = _ensure(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return ((g - inner) * s,)

    return Tensor._from_op(s, (x,), vjp, "softmax")


def log_softmax(x: Tensor, axis: int) -> Tensor:
    x = _ensure(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"log_softmax axis {axis} invalid for shape {x.shape}")
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def vjp(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out_data, (x,), vjp, "log_softmax")


# -- shape manipulation ----------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _ensure(x)
    shape = tuple(shape)
    out_data = x.data.reshape(shape)
    return Tensor._from_op(out_data, (x,),
                           lambda g: (g.reshape(x.shape),), "reshape",
                           check=False)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    x = _ensure(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)
    return Tensor._from_op(x.data.transpose(axes), (x,),
                           lambda g: (g.transpose(inv),), "transpose",
                           check=False)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None
                     for p, t in zip(pieces, tensors))

    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(out_data, tuple(tensors), vjp, "concat", check=False)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along one axis; backward scatter-adds into the source."""
    x = _ensure(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -x.shape[axis] or idx.max() >= x.shape[axis]):
        raise ShapeError(f"take indices out of range for axis {axis} of {x.shape}")
    out_data = np.take(x.data, idx, axis=axis)
    # scan orders gather unique positions, where plain fancy assignment is a
    # direct copy; np.add.at is only needed when indices repeat
    unique = np.unique(idx).size == idx.size

    def vjp(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        gsrc = np.moveaxis(g, axis, 0)
        if unique:
            gm[idx] = gsrc
        else:
            np.add.at(gm, idx, gsrc)
        return (gx,)

    return Tensor._from_op(out_data, (x,), vjp, "take", check=False)


# -- linear algebra / convolution -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), vjp, "matmul")


def depthwise_conv(x: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel 2-D convolution, odd square kernel, zero padding, same shape."""
    x, kernels = _ensure(x), _ensure(kernels)
    if x.ndim != 3 or kernels.ndim != 3:
        raise ShapeError("depthwise_conv expects x [C,H,W] and kernels [C,k,k]")
    c, h, w = x.shape
    ck, kh, kw = kernels.shape
    if ck != c:
        raise ShapeError(f"channel mismatch: input {c}, kernels {ck}")
    if kh != kw:
        raise ShapeError(f"kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {kh}")
    pad = (kh - 1) // 2
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x.data
    out = np.zeros((c, h, w))
    for di in range(kh):
        for dj in range(kw):
            out += kernels.data[:, di, dj][:, None, None] * xp[:, di:di + h, dj:dj + w]

    def vjp(g):
        gk = None
        if kernels.requires_grad:
            gk = np.empty_like(kernels.data)
            for di in range(kh):
                for dj in range(kw):
                    gk[:, di, dj] = (g * xp[:, di:di + h, dj:dj + w]).sum(axis=(1, 2))
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + h, dj:dj + w] += g * kernels.data[:, di, dj][:, None, None]
            gx = gxp[:, pad:pad + h, pad:pad + w]
        return gx, gk

    return Tensor._from_op(out, (x, kernels), vjp, "depthwise_conv")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-channel 2-D convolution: x [Cin,H,W], w [Cout,Cin,kh,kw]."""
    x, w = _ensure(x), _ensure(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError("conv2d expects x [Cin,H,W] and w [Cout,Cin,kh,kw]")
    cin, h, www = x.shape
    cout, cin2, kh, kw = w.shape
    if cin2 != cin:
        raise ShapeError(f"channel mismatch: input {cin}, weight {cin2}")
    hp, wp = h + 2 * padding, www + 2 * padding
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(
            f"conv2d geometry does not tile: input {x.shape}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}")
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    xp = np.zeros((cin, hp, wp))
    xp[:, padding:padding + h, padding:padding + www] = x.data
    out = np.zeros((cout, hout * wout))
    views = []
    for di in range(kh):
        for dj in range(kw):
            view = np.ascontiguousarray(
                xp[:, di:di + stride * hout:stride, dj:dj + stride * wout:stride]
            ).reshape(cin, -1)
            views.append(view)
            out += w.data[:, :, di, dj] @ view
    out = out.reshape(cout, hout, wout)

    def vjp(g):
        g2 = g.reshape(cout, -1)
        gw = None
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for n, (di, dj) in enumerate((i, j) for i in range(kh) for j in range(kw)):
                gw[:, :, di, dj] = g2 @ views[n].T
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for n, (di, dj) in enumerate((i, j) for i in range(kh) for j in range(kw)):
                gxp[:, di:di + stride * hout:stride, dj:dj + stride * wout:stride] += \
                    (w.data[:, :, di, dj].T @ g2).reshape(cin, hout, wout)
            gx = gxp[:, padding:padding + h, padding:padding + www]
        return gx, gw

    return Tensor._from_op(out, (x, w), vjp, "conv2d")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused per-position linear map: w [O,C] applied to x [C] or [C,H,W]."""
    x, w, b = _ensure(x), _ensure(w), _ensure(b)
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ShapeError(f"affine expects w [O,C] and b [O], got {w.shape}/{b.shape}")
    if x.ndim == 1:
        if x.shape[0] != w.shape[1]:
            raise ShapeError(f"affine input {x.shape} does not match w {w.shape}")
        out_data = w.data @ x.data + b.data

        def vjp1(g):
            gx = w.data.T @ g if x.requires_grad else None
            gw = np.outer(g, x.data) if w.requires_grad else None
            gb = g if b.requires_grad else None
            return gx, gw, gb

        return Tensor._from_op(out_data, (x, w, b), vjp1, "affine")
    if x.ndim == 3:
        c, h, ww = x.shape
        if c != w.shape[1]:
            raise ShapeError(f"affine input {x.shape} does not match w {w.shape}")
        x2 = x.data.reshape(c, -1)
        out_data = (w.data @ x2 + b.data[:, None]).reshape(-1, h, ww)

        def vjp3(g):
            g2 = g.reshape(w.shape[0], -1)
            gx = (w.data.T @ g2).reshape(x.shape) if x.requires_grad else None
            gw = g2 @ x2.T if w.requires_grad else None
            gb = g2.sum(axis=1) if b.requires_grad else None
            return gx, gw, gb

        return Tensor._from_op(out_data, (x, w, b), vjp3, "affine")
    raise ShapeError(f"affine expects a vector or [C,H,W] map, got {x.shape}")


def global_pool(x: Tensor) -> Tensor:
    """Mean over spatial positions: [C,H,W] -> [C]."""
    x = _ensure(x)
    if x.ndim != 3:
        raise ShapeError(f"global_pool expects [C,H,W], got {x.shape}")
    return mean_(x, axis=(1, 2))


# -- tape -------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def compute_grads(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradient of a scalar loss w.r.t. each tensor in ``wrt``.

    Does not touch any ``grad`` buffer, so independent calls (one tape per
    sample) can run concurrently and be reduced in a fixed order.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TensorError("loss is not connected to any requires_grad tensor")
    wrt = list(wrt)
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    keep = {id(t) for t in wrt}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._vjp is not None:
            parent_grads = node._vjp(g)
            for p, gp in zip(node._parents, parent_grads):
                if gp is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = gp if acc is None else acc + gp
        if id(node) not in keep:
            grads.pop(id(node), None)
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Repeated calls accumulate; reset with ``zero_grad``.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    leaves = [t for t in _toposort(loss) if t._vjp is None and t.requires_grad]
    for leaf, g in zip(leaves, compute_grads(loss, leaves)):
        _check_finite(g, "gradient")
        if leaf.grad is None:
            leaf.grad = g.copy()
        else:
            leaf.grad = leaf.grad + g


# -- constructors -----------------------------------------------------------

def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, float(value)), requires_grad=requires_grad)


# -- random streams ----------------------------------------------------------

_MASK64 = (1 << 64) - 1


class Rng:
    """Counter-based random stream keyed by (seed, stream_id).

    Identical keys reproduce identical draw sequences; distinct stream ids give
    statistically independent streams, so per-sample / per-step streams can be
    derived without coordination.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "Rng":
        """Fresh stream with the same seed and a new stream id."""
        return Rng(self.seed, stream_id)

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"
