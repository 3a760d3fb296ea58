"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable operation appends a node to the active :class:`Tape`;
:func:`backward` walks the tape once in reverse insertion order and
accumulates gradients into leaf tensors (``.grad``).

Arrays are channel-last: feature maps are ``(H, W, C)`` or ``(B, H, W, C)``.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "Parameter", "Tape", "ShapeError", "NumericError", "TapeError",
    "precision", "default_dtype", "strict", "is_strict", "no_grad", "active_tape",
    "as_tensor", "backward", "gradient_check", "GradCheckReport",
    "elementwise", "add", "sub", "mul", "div", "neg", "square", "sqrt", "exp", "log",
    "sin", "cos", "arccos", "clamp", "scale", "gelu", "relu",
    "sinc_sqrt", "cos_sqrt", "atan_ratio", "x_over_sin",
    "sum", "mean", "amax", "reshape", "transpose", "concat", "matmul", "softmax",
    "conv2d", "layer_norm_channels", "avg_pool2d", "cross_entropy", "resample2d",
]

ARCCOS_TOL = 1e-7


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A strict-mode numeric domain violation (division by zero, arccos range, cut locus)."""


class TapeError(RuntimeError):
    """Misuse of the recording tape (non-scalar loss, double backward)."""


class _Settings(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.strict = True
        self.grad_enabled = True
        self.tape = Tape()


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def record(self, kind: str, inputs: Sequence["Tensor"], vjp: Callable) -> int:
        if self.consumed:
            raise TapeError("tape already consumed by backward")
        self.nodes.append(_Node(kind, tuple(inputs), vjp))
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    vjp: Callable


_settings = _Settings()


def default_dtype():
    return _settings.dtype


@contextlib.contextmanager
def precision(dtype):
    """Create tensors at ``dtype`` (np.float32 for training, np.float64 for checks)."""
    prev = _settings.dtype
    _settings.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _settings.dtype = prev


@contextlib.contextmanager
def strict(enabled: bool = True):
    prev = _settings.strict
    _settings.strict = enabled
    try:
        yield
    finally:
        _settings.strict = prev


def is_strict() -> bool:
    return _settings.strict


@contextlib.contextmanager
def no_grad():
    prev = _settings.grad_enabled
    _settings.grad_enabled = False
    try:
        yield
    finally:
        _settings.grad_enabled = prev


def active_tape() -> Tape:
    if _settings.tape.consumed:
        _settings.tape = Tape()
    return _settings.tape


class Tensor:
    """Dense array with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            dtype = _settings.dtype
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t.tape = None
        t.name = None
        return t

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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor with a unique slash-separated name."""

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _settings.dtype
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, kind: str) -> Tensor:
    out = Tensor._wrap(data)
    if _settings.grad_enabled and any(t.requires_grad for t in inputs):
        tape = active_tape()
        out.requires_grad = True
        out.node_id = tape.record(kind, inputs, vjp)
        out.tape = tape
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, kind: str):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    if _settings.strict and np.any(b.data == 0):
        raise NumericError("division by zero")
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), vjp, "div")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _unary(x: Tensor, out: np.ndarray, deriv: Callable[[], np.ndarray], kind: str) -> Tensor:
    def vjp(g):
        return (g * deriv(),)

    return _result(out, (x,), vjp, kind)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, x.data * x.data, lambda: 2 * x.data, "square")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if _settings.strict and np.any(x.data < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(x.data)
    return _unary(x, out, lambda: 0.5 / out, "sqrt")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda: out, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if _settings.strict and np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    return _unary(x, np.log(x.data), lambda: 1 / x.data, "log")


def sin(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.sin(x.data), lambda: np.cos(x.data), "sin")


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.cos(x.data), lambda: -np.sin(x.data), "cos")


def arccos(x) -> Tensor:
    """arccos with inputs within ARCCOS_TOL of [-1, 1] clamped onto the interval."""
    x = as_tensor(x)
    if np.any(np.abs(x.data) > 1 + ARCCOS_TOL):
        raise NumericError("arccos input outside [-1, 1]")
    xc = np.clip(x.data, -1, 1)
    # zero slope at the clamped boundary keeps the chain rule finite
    return _unary(x, np.arccos(xc), lambda: -1 / np.sqrt(np.maximum(1 - xc * xc, 1e-300)), "arccos")


def clamp(x, lo=None, hi=None) -> Tensor:
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)

    def deriv():
        inside = np.ones_like(x.data)
        if lo is not None:
            inside = inside * (x.data >= lo)
        if hi is not None:
            inside = inside * (x.data <= hi)
        return inside

    return _unary(x, out, deriv, "clamp")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


_INV_SQRT2 = 1 / np.sqrt(2.0)
_INV_SQRT2PI = 1 / np.sqrt(2 * np.pi)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    cdf = 0.5 * (1 + erf(x.data * _INV_SQRT2))
    return _unary(x, x.data * cdf,
                  lambda: cdf + x.data * _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data), "gelu")


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.maximum(x.data, 0), lambda: (x.data > 0).astype(x.dtype), "relu")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "square": square,
    "sqrt": sqrt, "exp": exp, "sin": sin, "cos": cos, "arccos": arccos, "gelu": gelu,
}


def elementwise(op_kind: str, a, b=None, **kw) -> Tensor:
    """Dispatch by name; ``clamp`` takes ``lo``/``hi`` and ``scale`` takes ``c``."""
    if op_kind == "clamp":
        return clamp(a, kw.get("lo"), kw.get("hi"))
    if op_kind == "scale":
        return scale(a, kw["c"])
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    if op_kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ShapeError(f"{op_kind} needs two operands")
        return fn(a, b)
    return fn(a)


# -- smooth special functions used by the sphere maps ------------------------
#
# All are written as functions of squared norms so that their derivatives
# stay finite at the origin; series branches cover the removable singularity.

_SERIES_Q = 1e-4


def sinc_sqrt(q) -> Tensor:
    """sin(sqrt(q)) / sqrt(q) for q >= 0."""
    q = as_tensor(q)
    qd = q.data
    small = qd < _SERIES_Q
    rt = np.sqrt(np.where(small, 1.0, qd))
    s_big = np.sin(rt) / rt
    s_small = 1 - qd / 6 + qd ** 2 / 120 - qd ** 3 / 5040 + qd ** 4 / 362880
    out = np.where(small, s_small, s_big)

    def deriv():
        d_big = (np.cos(rt) - s_big) / (2 * np.where(small, 1.0, qd))
        d_small = -1 / 6 + qd / 60 - qd ** 2 / 1680 + qd ** 3 / 90720
        return np.where(small, d_small, d_big)

    return _unary(q, out.astype(qd.dtype), deriv, "sinc_sqrt")


def cos_sqrt(q) -> Tensor:
    """cos(sqrt(q)) for q >= 0; derivative is -sinc_sqrt(q) / 2."""
    q = as_tensor(q)
    out = np.cos(np.sqrt(q.data))
    return _unary(q, out, lambda: -0.5 * sinc_sqrt(q.detach()).data, "cos_sqrt")


def atan_ratio(s2, c) -> Tensor:
    """atan2(sqrt(s2), c) / sqrt(s2): the polar angle divided by the tangential radius."""
    s2, c = _pair(s2, c)
    sd, cd = np.broadcast_arrays(s2.data, c.data)
    cd_safe = np.where(cd == 0, 1.0, cd)
    t = sd / cd_safe ** 2
    small = (cd > 0) & (t < _SERIES_Q)
    s = np.sqrt(np.where(small, 1.0, sd))
    s_safe = np.where(s == 0, 1.0, s)
    psi = np.arctan2(s, cd)
    series = (1 - t / 3 + t ** 2 / 5 - t ** 3 / 7 + t ** 4 / 9 - t ** 5 / 11) / cd_safe
    out = np.where(small, series, psi / s_safe)
    rho2 = sd + cd * cd

    def vjp(g):
        d_s2 = np.where(
            small,
            (-1 / 3 + 2 * t / 5 - 3 * t ** 2 / 7 + 4 * t ** 3 / 9 - 5 * t ** 4 / 11) / cd_safe ** 3,
            (cd * s / rho2 - psi) / (2 * s_safe ** 3),
        )
        d_c = -1 / rho2
        return _unbroadcast(g * d_s2, s2.shape), _unbroadcast(g * d_c, c.shape)

    return _result(out.astype(s2.dtype), (s2, c), vjp, "atan_ratio")


def x_over_sin(x) -> Tensor:
    """x / sin(x), continuous at 0."""
    x = as_tensor(x)
    xd = x.data
    small = np.abs(xd) < 1e-3
    sn = np.sin(np.where(small, 1.0, xd))
    x2 = xd * xd
    out = np.where(small, 1 + x2 / 6 + 7 * x2 ** 2 / 360, np.where(small, 1.0, xd) / sn)

    def deriv():
        big = (sn - np.where(small, 1.0, xd) * np.cos(np.where(small, 1.0, xd))) / sn ** 2
        return np.where(small, xd / 3 + 7 * xd ** 3 / 90, big)

    return _unary(x, out, deriv, "x_over_sin")


# -- reductions and shape ops ----------------------------------------------


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), vjp, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis, keepdims), 1.0 / n)


def amax(x, axis=None, keepdims=False) -> Tensor:
    """Maximum reduction; ties share the gradient equally."""
    x = as_tensor(x)
    out = np.max(x.data, axis=axis, keepdims=True)
    hit = (x.data == out).astype(x.dtype)
    hit /= hit.sum(axis=axis, keepdims=True)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * x.ndim)
        return (g * hit,)

    if not keepdims:
        out = out.reshape(()) if axis is None else np.squeeze(out, axis=axis)
    return _result(np.asarray(out), (x,), vjp, "amax")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _getitem(x: Tensor, idx) -> Tensor:
    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return _result(x.data[idx], (x,), vjp, "slice")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, vjp, "concat")


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), vjp, "matmul")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), vjp, "softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(len(labels))
    out = -logp[rows, labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (g * p / len(labels),)

    return _result(np.asarray(out, dtype=logits.dtype), (logits,), vjp, "cross_entropy")


# -- convolution and normalization ------------------------------------------

CONV_KINDS = ("k3x3", "k1x1", "depthwise3x3")


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"feature map must be HxWxC or BxHxWxC, got {x.shape}")
    return x, False


def conv2d(x, kernel, kind: str = "k3x3") -> Tensor:
    """Stride-1 convolution with zero "same" padding, channel-last.

    Kernel layouts: ``k3x3`` (3, 3, Cin, Cout), ``k1x1`` (1, 1, Cin, Cout) or
    (Cin, Cout), ``depthwise3x3`` (3, 3, C).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    x4, squeeze = _batched(x)
    cin = x4.shape[-1]
    if kind == "k1x1":
        k2 = kernel if kernel.ndim == 2 else reshape(kernel, kernel.shape[-2:])
        if k2.shape[0] != cin:
            raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {k2.shape[0]}")
        out = matmul(x4, k2)
    elif kind == "k3x3":
        if kernel.shape[:3] != (3, 3, cin):
            raise ShapeError(f"conv2d: kernel {kernel.shape} does not match {cin} input channels")
        out = _conv3x3(x4, kernel)
    elif kind == "depthwise3x3":
        if kernel.shape != (3, 3, cin):
            raise ShapeError(f"conv2d: depthwise kernel {kernel.shape} vs {cin} channels")
        out = _dwconv3x3(x4, kernel)
    else:
        raise ValueError(f"unknown conv kind {kind!r}")
    return reshape(out, out.shape[1:]) if squeeze else out


def _shifts(h, w):
    for dy in range(3):
        for dx in range(3):
            yield dy, dx, (slice(None), slice(dy, dy + h), slice(dx, dx + w))


def _conv3x3(x: Tensor, kernel: Tensor) -> Tensor:
    b, h, w, cin = x.shape
    cout = kernel.shape[3]
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[sl] for _, _, sl in _shifts(h, w)], axis=-1).reshape(-1, 9 * cin)
    k2 = kernel.data.reshape(9 * cin, cout)
    out = (cols @ k2).reshape(b, h, w, cout)

    def vjp(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ k2.T).reshape(b, h, w, 9, cin)
            gxp = np.zeros_like(xp)
            for i, (_, _, sl) in enumerate(_shifts(h, w)):
                gxp[sl] += gcols[..., i, :]
            gx = gxp[:, 1:-1, 1:-1]
        return gx, gk

    return _result(out, (x, kernel), vjp, "conv3x3")


def _dw_apply(xp: np.ndarray, k: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.einsum("bhwcij,ijc->bhwc", windows, k)


def _dwconv3x3(x: Tensor, kernel: Tensor) -> Tensor:
    b, h, w, c = x.shape
    pad = ((0, 0), (1, 1), (1, 1), (0, 0))
    xp = np.pad(x.data, pad)
    out = _dw_apply(xp, kernel.data)

    def vjp(g):
        gk = None
        if kernel.requires_grad:
            gk = np.stack([np.einsum("bhwc,bhwc->c", g, xp[sl]) for _, _, sl in _shifts(h, w)])
            gk = gk.reshape(kernel.shape)
        # the input gradient is the same correlation with a flipped kernel
        gx = _dw_apply(np.pad(g, pad), kernel.data[::-1, ::-1]) if x.requires_grad else None
        return gx, gk

    return _result(out, (x, kernel), vjp, "dwconv3x3")


def layer_norm_channels(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize each pixel's channel vector to zero mean, unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer norm: gain/bias {gain.shape}/{bias.shape} vs {c} channels")
    xd = x.data
    xc = xd - xd.mean(axis=-1, keepdims=True)
    inv = 1 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        axes = tuple(range(xd.ndim - 1))
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _result(out, (x, gain, bias), vjp, "layer_norm")


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    x4, squeeze = _batched(x)
    b, h, w, c = x4.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out = x4.data.reshape(b, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def vjp(g):
        gx = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
        return (gx,)

    y = _result(out, (x4,), vjp, "avg_pool")
    return reshape(y, y.shape[1:]) if squeeze else y


def resample2d(x, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply separable linear operators: out[b] = rows @ x[b] @ cols.T per channel."""
    x = as_tensor(x)
    x4, squeeze = _batched(x)
    rows = np.asarray(rows, dtype=x.dtype)
    cols = np.asarray(cols, dtype=x.dtype)
    out = np.einsum("Hh,bhwc,Ww->bHWc", rows, x4.data, cols, optimize=True)

    def vjp(g):
        return (np.einsum("Hh,bHWc,Ww->bhwc", rows, g, cols, optimize=True),)

    y = _result(out, (x4,), vjp, "resample2d")
    return reshape(y, y.shape[1:]) if squeeze else y


# -- backward and gradient checking -------------------------------------------


def backward(loss: Tensor) -> dict:
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``.

    Returns a mapping leaf tensor -> gradient array. The tape is cleared and
    marked consumed; a second call on the same loss raises :class:`TapeError`.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.tape is None:
        return {}
    tape = loss.tape
    if tape.consumed:
        raise TapeError("backward called twice on the same tape")
    grads = {loss.node_id: np.ones_like(loss.data)}
    leaves = {}
    for idx in range(loss.node_id, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        for inp, ig in zip(node.inputs, node.vjp(g)):
            if ig is None or not inp.requires_grad:
                continue
            if inp.tape is tape:
                prev = grads.get(inp.node_id)
                grads[inp.node_id] = ig if prev is None else prev + ig
            elif inp.node_id is None:
                ig = np.asarray(ig, dtype=inp.dtype)
                inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                leaves[inp] = inp.grad
    tape.nodes.clear()
    tape.consumed = True
    return leaves


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-4
    message: str = ""

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.message and self.max_error <= self.tol


def gradient_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5,
                   tol: float = 1e-4, max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` with central differences.

    The error per parameter is max |analytic - numeric| / max(1, |numeric|).
    ``max_entries`` caps the probed coordinates per parameter (random subset).
    """
    params = list(params)
    report = GradCheckReport(tol=tol)
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    rng = np.random.default_rng(seed)
    for i, p in enumerate(params):
        name = p.name or f"param{i}"
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(analytic)):
            report.message = f"non-finite analytic gradient for {name}"
            report.errors[name] = float("inf")
            return report
        flat_idx = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            flat_idx = rng.choice(p.size, max_entries, replace=False)
        original = p.data
        worst = 0.0
        with no_grad():
            for j in flat_idx:
                idx = np.unravel_index(j, p.shape)
                probe = original.copy()
                probe[idx] += step
                p.data = probe
                fp = f().item()
                probe[idx] -= 2 * step
                fm = f().item()
                p.data = original
                numeric = (fp - fm) / (2 * step)
                err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, float(err))
        report.errors[name] = worst
    return report
