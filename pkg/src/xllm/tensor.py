"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every differentiable operation records its parents and a closure mapping the
output adjoint to input adjoints. ``Tensor.backward`` orders the recorded
graph topologically and replays the closures in reverse.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericalError

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "is_grad_enabled",
    "tape",
    "grad_check",
    "matmul",
    "add",
    "mul",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "gelu",
    "absolute",
    "softmax",
    "log_softmax",
    "layer_norm",
    "cross_entropy",
    "embedding",
    "concat",
    "stack",
    "cumsum",
    "minimum",
    "maximum",
    "masked_fill",
    "conv1d",
    "conv2d",
    "max_pool_time",
    "primitive_suite",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind not in "biuf":
        raise ConfigurationError(f"unsupported dtype {arr.dtype}")
    return arr.astype(np.float64, copy=False)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad)
            if grad.shape != self.shape:
                raise DimensionError(f"seed shape {grad.shape} != {self.shape}")
        order = tape(self)
        adjoints: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaves get private buffers so optimisers may update them in place
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = adjoints.get(key)
                adjoints[key] = pg if prev is None else prev + pg

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(_lift(other), reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method aliases ---------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)


def _raise_item(t: Tensor):
    raise DimensionError(f"item() needs a single element, got shape {t.shape}")


class Parameter(Tensor):
    """A leaf tensor owned by a module; trainable unless frozen."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def tape(root: Tensor) -> list[Tensor]:
    """Return the recorded graph under ``root`` in topological order.

    Reversing the list gives the adjoint replay order; each node appears once.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _result(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.data
    return _result(x**exponent, (a,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth everywhere)."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * d,)

    return _result(out, (a,), backward, "gelu")


def absolute(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the adjoint to ``a``."""
    a, b = _lift(a), _lift(b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.where(pick_a, g, 0.0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(pick_a, 0.0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "minimum")


def maximum(a, b) -> Tensor:
    """Elementwise maximum; ties route the adjoint to ``a``."""
    a, b = _lift(a), _lift(b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.where(pick_a, g, 0.0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(pick_a, 0.0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "maximum")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, value, a.data)
    return _result(out, (a,), lambda g: (_unbroadcast(np.where(mask, 0.0, g), a.shape),), "masked_fill")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) or isinstance(i, np.integer) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward, "stack")


def cumsum(a: Tensor, axis: int = -1) -> Tensor:
    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _result(np.cumsum(a.data, axis=axis), (a,), backward, "cumsum")


# ---------------------------------------------------------------------------
# linear algebra and network primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    # a 2-D right operand folds the leading axes into one BLAS call
    flat = bd.ndim == 2

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if flat:
                ga = (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(ad.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if flat:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(*ad.shape[:-1], bd.shape[-1]) if flat else ad @ bd
    return _result(out, (a, b), backward, "matmul")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward, "log_softmax")


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an affine map."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    w, b = weight.data, bias.data
    out = xhat * w + b

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g * xhat).reshape(-1, w.shape[-1]).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, b.shape[-1]).sum(axis=0)
        if x.requires_grad:
            gh = g * w
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return _result(out, (x, weight, bias), backward, "layer_norm")


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean of -log softmax(logits)[target] over rows.

    ``logits`` is ``[..., V]``; ``targets`` holds integer class ids with the
    leading shape. Rows with zero weight are excluded from the mean.
    """
    targets = np.asarray(targets)
    if targets.dtype.kind not in "iu":
        raise ConfigurationError("cross_entropy targets must be integers")
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    t = targets.reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise DimensionError(f"{t.shape[0]} targets for {flat.shape[0]} logit rows")
    w = np.ones(t.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    total = w.sum()
    if total <= 0:
        raise NumericalError("cross_entropy with zero total weight")
    safe_t = np.where(w > 0, t, 0)
    if np.any((safe_t < 0) | (safe_t >= vocab)):
        raise DimensionError("target id outside the vocabulary")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(flat.shape[0])
    nll = lse - shifted[rows, safe_t]
    loss = float((w * nll).sum() / total)

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, safe_t] -= 1.0
        p *= (w / total)[:, None] * g
        return (p.reshape(logits.shape),)

    return _result(np.asarray(loss), (logits,), backward, "cross_entropy")


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ConfigurationError("embedding ids must be integers")
    n, d = table.shape

    def backward(g):
        full = np.zeros((n, d))
        np.add.at(full, ids.reshape(-1), g.reshape(-1, d))
        return (full,)

    return _result(table.data[ids], (table,), backward, "embedding")


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, (int, np.integer)) else tuple(v)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding=(0, 0), groups: int = 1) -> Tensor:
    """Time-major 1-D convolution.

    ``x`` is ``[B, T, C_in]``. For ``groups == 1`` the weight is
    ``[K, C_in, C_out]``; for depthwise (``groups == C_in``) it is ``[K, C_in]``.
    """
    if x.ndim != 3:
        raise DimensionError(f"conv1d expects [B, T, C], got {x.shape}")
    pad_l, pad_r = _pair(padding)
    B, T, cin = x.shape
    K = weight.shape[0]
    if weight.shape[1] != cin:
        raise DimensionError(f"conv1d weight expects {weight.shape[1]} channels, input has {cin}")
    depthwise = groups != 1
    if depthwise and (groups != cin or weight.ndim != 2):
        raise ConfigurationError("conv1d supports groups=1 or depthwise groups=C_in only")
    xp = np.pad(x.data, ((0, 0), (pad_l, pad_r), (0, 0)))
    t_out = (T + pad_l + pad_r - K) // stride + 1
    if t_out < 1:
        raise DimensionError("conv1d input shorter than kernel")
    span = stride * (t_out - 1) + 1
    # [B, t_out, K, C]
    cols = np.stack([xp[:, k : k + span : stride, :] for k in range(K)], axis=2)
    w = weight.data
    if depthwise:
        out = np.einsum("btkc,kc->btc", cols, w)
    else:
        out = cols.reshape(B, t_out, K * cin) @ w.reshape(K * cin, -1)
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            if depthwise:
                gw = np.einsum("btkc,btc->kc", cols, g)
            else:
                gw = (cols.reshape(-1, K * cin).T @ g.reshape(-1, g.shape[-1])).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        if x.requires_grad:
            if depthwise:
                gcols = g[:, :, None, :] * w[None, None, :, :]
            else:
                gcols = (g @ w.reshape(K * cin, -1).T).reshape(B, t_out, K, cin)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k : k + span : stride, :] += gcols[:, :, k, :]
            gx = gxp[:, pad_l : pad_l + T, :]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, backward, "conv1d")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=((0, 0), (0, 0))) -> Tensor:
    """Channels-last 2-D convolution: ``x`` is ``[B, H, W, C_in]``, weight ``[KH, KW, C_in, C_out]``."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects [B, H, W, C], got {x.shape}")
    sh, sw = _pair(stride)
    (pt, pb), (pl, pr) = padding
    B, H, W, cin = x.shape
    KH, KW, wcin, cout = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d weight expects {wcin} channels, input has {cin}")
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    ho = (H + pt + pb - KH) // sh + 1
    wo = (W + pl + pr - KW) // sw + 1
    if ho < 1 or wo < 1:
        raise DimensionError("conv2d input smaller than kernel")
    span_h, span_w = sh * (ho - 1) + 1, sw * (wo - 1) + 1
    cols = np.stack(
        [xp[:, i : i + span_h : sh, j : j + span_w : sw, :] for i in range(KH) for j in range(KW)],
        axis=3,
    )  # [B, ho, wo, KH*KW, C]
    wmat = weight.data.reshape(KH * KW * cin, cout)
    out = cols.reshape(B, ho, wo, -1) @ wmat
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (cols.reshape(-1, KH * KW * cin).T @ g.reshape(-1, cout)).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(B, ho, wo, KH * KW, cin)
            gxp = np.zeros_like(xp)
            n = 0
            for i in range(KH):
                for j in range(KW):
                    gxp[:, i : i + span_h : sh, j : j + span_w : sw, :] += gcols[:, :, :, n, :]
                    n += 1
            gx = gxp[:, pt : pt + H, pl : pl + W, :]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(out, parents, backward, "conv2d")


def max_pool_time(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max-pool over axis 1 of ``[B, T, C]``; output length ``T // kernel``.

    The adjoint goes to the first maximal element of each window.
    """
    B, T, C = x.shape
    t_out = T // kernel
    if t_out < 1:
        raise DimensionError(f"cannot pool {T} frames with kernel {kernel}")
    win = x.data[:, : t_out * kernel, :].reshape(B, t_out, kernel, C)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, arg[:, :, None, :], g[:, :, None, :], axis=2)
        gx = np.zeros(x.shape)
        gx[:, : t_out * kernel, :] = gwin.reshape(B, t_out * kernel, C)
        return (gx,)

    return _result(out, (x,), backward, "max_pool_time")


def primitive_suite() -> dict[str, Callable]:
    """Name -> callable for every differentiable primitive."""
    return {
        "add": add,
        "mul": mul,
        "matmul": matmul,
        "exp": exp,
        "log": log,
        "tanh": tanh,
        "sigmoid": sigmoid,
        "relu": relu,
        "gelu": gelu,
        "abs": absolute,
        "minimum": minimum,
        "maximum": maximum,
        "softmax": softmax,
        "log_softmax": log_softmax,
        "layer_norm": layer_norm,
        "cross_entropy": cross_entropy,
        "embedding": embedding,
        "conv1d": conv1d,
        "conv2d": conv2d,
        "max_pool_time": max_pool_time,
        "sum": tsum,
        "mean": mean,
        "concat": concat,
        "stack": stack,
        "getitem": getitem,
        "cumsum": cumsum,
        "reshape": reshape,
        "transpose": transpose,
        "masked_fill": masked_fill,
    }


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, indices: Iterable | None = None) -> float:
    """Largest relative gap between the tape gradient and central differences.

    The gap at one coordinate is ``|a - d| / (|a| + |d| + 1e-12)``. ``indices``
    restricts the comparison to a subset of flat coordinates.
    """
    base = _as_array(x.data if isinstance(x, Tensor) else x).copy()
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise DimensionError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = np.zeros_like(base) if probe.grad is None else probe.grad
    if not (np.all(np.isfinite(analytic)) and np.isfinite(out.data).all()):
        raise NumericalError("non-finite value or gradient in grad_check")
    flat = base.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in coords:
            saved = flat[i]
            flat[i] = saved + h
            up = f(Tensor(base)).item()
            flat[i] = saved - h
            down = f(Tensor(base)).item()
            flat[i] = saved
            fd = (up - down) / (2.0 * h)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError("non-finite value in finite differences")
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - fd) / (abs(a) + abs(fd) + 1e-12))
    return worst
