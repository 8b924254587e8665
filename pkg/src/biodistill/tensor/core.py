"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure; ops build a DAG
and ``Tensor.backward()`` walks it in reverse topological order, accumulating
gradients additively into every reachable tensor with ``requires_grad``.

Broadcasting is deliberately narrow: two operands combine only when their
trailing dimensions match exactly, with extra leading (batch) dimensions
allowed on either side, or when one operand is a scalar. No size-1
stretching — a smaller op surface means fewer gradient edge cases.

Training runs in float32; gradient checks switch the default dtype to
float64 via :func:`set_default_dtype` / :func:`using_dtype`.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

from ..errors import NumericError, ShapeError

_DEFAULT_DTYPE = np.float32
_DEBUG_NAN = False

_DTYPE_NAMES = {
    "float32": np.float32,
    "float64": np.float64,
    np.float32: np.float32,
    np.float64: np.float64,
}


def set_default_dtype(dtype) -> None:
    """Set the dtype used when wrapping python data ('float32' or 'float64')."""
    global _DEFAULT_DTYPE
    try:
        _DEFAULT_DTYPE = _DTYPE_NAMES[dtype]
    except KeyError:
        raise ValueError(f"unsupported dtype {dtype!r}") from None


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (used by gradient checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def set_debug_nan(flag: bool) -> None:
    """When on, every op validates its output is finite and raises NumericError."""
    global _DEBUG_NAN
    _DEBUG_NAN = bool(flag)


class Tensor:
    """An ndarray with an optional gradient and a link into the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operators -----------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def take_along(self, idx, axis):
        return take_along(self, idx, axis)

    def scatter_along(self, idx, axis, size):
        return scatter_along(self, idx, axis, size)

    # -- backward pass -------------------------------------------------

    def backward(self) -> None:
        """Reverse sweep from a scalar loss; consumes the tape.

        Gradients land on every tensor with requires_grad reachable from
        this node. Interior buffers are released as the sweep progresses,
        so a graph can only be walked once.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward: loss must be a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward
            if fn is None:
                continue
            fn(node.grad)
            node._backward = None
            node._parents = ()
            node.grad = None


def _coerce(data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(_DEFAULT_DTYPE)
    return arr


def param(data, dtype=None) -> Tensor:
    """Trainable leaf tensor. Float arrays keep their dtype; other input
    converts to the current default."""
    return Tensor(_coerce(data, dtype), requires_grad=True)


def collect_grads(params: dict) -> dict:
    """Gradient map after backward; parameters the loss never touched get zeros."""
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def constant(data, dtype=None) -> Tensor:
    return Tensor(_coerce(data, dtype), requires_grad=False)


def stop_gradient(t: Tensor) -> Tensor:
    """Same values, severed from the tape."""
    return Tensor(t.data, requires_grad=False) if isinstance(t, Tensor) else constant(t)


# -- op plumbing -------------------------------------------------------


def _wrap(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(out_data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _DEBUG_NAN and not np.all(np.isfinite(out_data)):
        raise NumericError(f"{op}: non-finite values in forward output")
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if short != long_[len(long_) - len(short):]:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to an operand's shape (leading-batch rule)."""
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


def _add_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _reduce_to(np.asarray(g), t.data.shape)
    if t.grad is None:
        # never alias: closures may hand back views of upstream buffers
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


# -- elementwise arithmetic --------------------------------------------


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_pair("add", a, b)
    out_data = a.data + b.data

    def _bwd(g):
        _add_grad(a, g)
        _add_grad(b, g)

    return _make(out_data, (a, b), _bwd, "add")


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_pair("sub", a, b)
    out_data = a.data - b.data

    def _bwd(g):
        _add_grad(a, g)
        _add_grad(b, -g)

    return _make(out_data, (a, b), _bwd, "sub")


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_pair("mul", a, b)
    out_data = a.data * b.data

    def _bwd(g):
        _add_grad(a, g * b.data)
        _add_grad(b, g * a.data)

    return _make(out_data, (a, b), _bwd, "mul")


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_pair("div", a, b)
    out_data = a.data / b.data

    def _bwd(g):
        _add_grad(a, g / b.data)
        _add_grad(b, -g * out_data / b.data)

    return _make(out_data, (a, b), _bwd, "div")


def neg(a) -> Tensor:
    a = _wrap(a)

    def _bwd(g):
        _add_grad(a, -g)

    return _make(-a.data, (a,), _bwd, "neg")


# -- linear algebra ----------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")
    _check_pair("matmul(batch)", Tensor(np.empty(a.shape[:-2])), Tensor(np.empty(b.shape[:-2])))
    out_data = np.matmul(a.data, b.data)

    def _bwd(g):
        _add_grad(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _add_grad(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out_data, (a, b), _bwd, "matmul")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = _wrap(a)
    perm = tuple(axes) if axes is not None else tuple(range(a.data.ndim))[::-1]
    inv = tuple(np.argsort(perm))

    def _bwd(g):
        _add_grad(a, g.transpose(inv))

    return _make(a.data.transpose(perm), (a,), _bwd, "transpose")


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    orig = a.data.shape
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {orig} as {tuple(shape)}") from None

    def _bwd(g):
        _add_grad(a, g.reshape(orig))

    return _make(out_data, (a,), _bwd, "reshape")


def _getitem(a: Tensor, key) -> Tensor:
    out_data = a.data[key]
    advanced = isinstance(key, (np.ndarray, list)) or (
        isinstance(key, tuple) and any(isinstance(k, (np.ndarray, list)) for k in key)
    )

    def _bwd(g):
        buf = np.zeros_like(a.data)
        if advanced:
            np.add.at(buf, key, g)
        else:
            buf[key] += g
        _add_grad(a, buf)

    return _make(out_data, (a,), _bwd, "slice")


def _along_index(idx: np.ndarray, axis: int, shape: tuple) -> tuple:
    """Fancy-index tuple equivalent to take_along_axis at `shape`."""
    grids = list(np.indices(shape, sparse=True))
    grids[axis] = idx
    return tuple(grids)


def take_along(a, idx: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis; idx broadcasts against the tensor off-axis."""
    a = _wrap(a)
    idx = np.asarray(idx)
    if idx.ndim != a.data.ndim:
        raise ShapeError(
            f"take_along: index rank {idx.ndim} must match tensor rank {a.data.ndim}"
        )
    axis = axis % a.data.ndim
    try:
        out_data = np.take_along_axis(a.data, idx, axis=axis)
    except (ValueError, IndexError) as e:
        raise ShapeError(f"take_along: {e}") from None

    def _bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, _along_index(idx, axis, out_data.shape), g)
        _add_grad(a, buf)

    return _make(out_data, (a,), _bwd, "take_along")


def scatter_along(src, idx: np.ndarray, axis: int, size: int) -> Tensor:
    """Place src elements into a zero tensor widened to `size` along `axis`.

    Duplicate indices accumulate, making this the exact adjoint of
    :func:`take_along`. idx broadcasts against src off-axis.
    """
    src = _wrap(src)
    idx = np.asarray(idx)
    if idx.ndim != src.data.ndim:
        raise ShapeError(
            f"scatter_along: index rank {idx.ndim} must match src rank {src.data.ndim}"
        )
    axis = axis % src.data.ndim
    out_shape = list(src.data.shape)
    out_shape[axis] = size
    out_data = np.zeros(out_shape, dtype=src.data.dtype)
    try:
        np.add.at(out_data, _along_index(idx, axis, src.data.shape), src.data)
    except (ValueError, IndexError) as e:
        raise ShapeError(f"scatter_along: {e}") from None

    def _bwd(g):
        _add_grad(src, np.take_along_axis(g, idx, axis=axis))

    return _make(out_data, (src,), _bwd, "scatter_along")


# -- reductions --------------------------------------------------------


def _restore_axes(g: np.ndarray, axis, keepdims: bool, ndim: int) -> np.ndarray:
    if keepdims or axis is None:
        return g
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % ndim for ax in axes)
    for ax in sorted(axes):
        g = np.expand_dims(g, ax)
    return g


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def _bwd(g):
        g = _restore_axes(np.asarray(g), axis, keepdims, a.data.ndim)
        _add_grad(a, np.broadcast_to(g, a.data.shape))

    return _make(np.asarray(out_data), (a,), _bwd, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out_data.size, 1) if a.data.size else 1.0

    def _bwd(g):
        g = _restore_axes(np.asarray(g), axis, keepdims, a.data.ndim)
        _add_grad(a, np.broadcast_to(g, a.data.shape) / count)

    return _make(np.asarray(out_data), (a,), _bwd, "mean")


def min_along(a, axis: int, keepdims: bool = False) -> Tensor:
    """Minimum along one axis; gradient routes to the first minimizer."""
    a = _wrap(a)
    axis = axis % a.data.ndim
    amin = np.argmin(a.data, axis=axis)
    idx = np.expand_dims(amin, axis)
    picked = np.take_along_axis(a.data, idx, axis=axis)
    out_data = picked if keepdims else np.squeeze(picked, axis=axis)

    def _bwd(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, idx, g, axis=axis)
        _add_grad(a, buf)

    return _make(out_data, (a,), _bwd, "min_along")


# -- elementwise nonlinear ---------------------------------------------


def exp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def _bwd(g):
        _add_grad(a, g * out_data)

    return _make(out_data, (a,), _bwd, "exp")


def log(a) -> Tensor:
    a = _wrap(a)

    def _bwd(g):
        _add_grad(a, g / a.data)

    return _make(np.log(a.data), (a,), _bwd, "log")


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out_data = np.sqrt(a.data)

    def _bwd(g):
        _add_grad(a, g * 0.5 / out_data)

    return _make(out_data, (a,), _bwd, "sqrt")


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo) elementwise; gradient passes only where a >= lo."""
    a = _wrap(a)
    out_data = np.maximum(a.data, lo)

    def _bwd(g):
        _add_grad(a, g * (a.data >= lo))

    return _make(out_data, (a,), _bwd, "clip_min")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    a = _wrap(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = (x * cdf).astype(x.dtype)

    def _bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _add_grad(a, g * (cdf + x * pdf))

    return _make(out_data, (a,), _bwd, "gelu")


# -- fused normalization ops -------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _bwd(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _add_grad(a, out_data * (g - inner))

    return _make(out_data, (a,), _bwd, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def _bwd(g):
        soft = np.exp(out_data)
        _add_grad(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), _bwd, "log_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine. Zero-variance input → zeros."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must be ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data

    def _bwd(g):
        _add_grad(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        _add_grad(bias, g.reshape(-1, d).sum(axis=0))
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _add_grad(x, (gx - m1 - xhat * m2) * inv_std)

    return _make(out_data, (x, gain, bias), _bwd, "layer_norm")


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale slices along `axis` to unit L2 norm; zero slices stay near zero."""
    a = _wrap(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out_data = a.data / denom

    def _bwd(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _add_grad(a, (g - out_data * inner) / denom)

    return _make(out_data, (a,), _bwd, "l2_normalize")
