"""
Dense tensors with a dynamic reverse-mode gradient tape.

Every op below takes ``Tensor`` inputs and returns a fresh ``Tensor``.  When a
``Tape`` is active and at least one input requires a gradient, the op appends
a node (output, inputs, vector-Jacobian closure) to the tape.  ``Tape.backward``
replays the nodes in reverse recording order, which is a valid reverse
topological order because a node is always recorded after its inputs exist.

Broadcasting is deliberately limited: a binary op accepts either equal shapes
or a right operand whose shape equals the trailing axes of the left operand
(bias addition, per-feature scaling, scalars).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

# Finite-value checks on the ops that publish them.  Training can switch them off.
CHECK_FINITE = True

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class Tensor:
    """Row-major float array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Stop-gradient: same values, no tape connection."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_TAPES: list["Tape | None"] = []


class Tape:
    """Ordered record of differentiable ops for one forward/backward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the scalar loss.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def tensors(self) -> Iterator[Tensor]:
        """Every tensor that appears on the tape, as input or output."""
        for node in self.nodes:
            yield node.out
            yield from node.inputs

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(.) to every leaf that requires a gradient.

        Leaf gradients are stored on ``.grad`` (overwriting) and also returned.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        for node in reversed(self.nodes):
            produced.add(id(node.out))
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        leaves: dict[Tensor, np.ndarray] = {}
        seen = set()
        for node in self.nodes:
            for t in node.inputs:
                key = id(t)
                if key in seen or key in produced or not t.requires_grad:
                    continue
                seen.add(key)
                g = grads.get(key)
                if g is None:
                    g = np.zeros_like(t.data)
                t.grad = g
                leaves[t] = g
        if id(loss) not in produced and loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            leaves[loss] = loss.grad
        return leaves


@contextmanager
def no_grad():
    """Suspend recording; ops run eagerly with no tape nodes."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(_Node(out, tuple(inputs), backward))
    return out


def _check_finite(op: str, *arrays: np.ndarray) -> None:
    if not CHECK_FINITE:
        return
    for arr in arrays:
        with np.errstate(over="ignore", invalid="ignore"):
            total = arr.sum()
        if np.isfinite(total):
            continue
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            idx = tuple(int(i) for i in bad[0])
            raise NumericError(f"{op}: non-finite input {arr[idx]!r} at index {idx}")


def _trailing_compatible(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                         "(equal shapes or trailing-axis bias only)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


# ---------------------------------------------------------------------------
# elementwise binary
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if b.ndim > a.ndim:
        a, b = b, a
    _trailing_compatible(a, b, "add")
    _check_finite("add", a.data, b.data)
    ashape, bshape = a.shape, b.shape

    def backward(g):
        return g, _reduce_to(g, bshape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b, a if isinstance(a, Tensor) else None)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if b.ndim > a.ndim:
        a, b = b, a
    _trailing_compatible(a, b, "mul")
    _check_finite("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, _reduce_to(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across every leading index of ``a``) or has
    exactly the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if b.ndim != 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: leading axes differ for shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    if bd.ndim == 2:
        def backward(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if b.requires_grad else None
            return ga, gb
    else:
        def backward(g):
            ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
            gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
            return ga, gb

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise unary
# ---------------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.maximum(x, 0), (a,), lambda g: (g * (x > 0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    _check_finite("sigmoid", x)
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    _check_finite("gelu", x)
    u = _SQRT_2_OVER_PI * (x + _GELU_C * (x * x * x))
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make(y, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and normalisations
# ---------------------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(y), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_finite("mean", a.data)
    shape = a.shape
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([shape[i] for i in axes]))
    y = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.asarray(y), (a,), backward)


def sum_sq(a: Tensor) -> Tensor:
    """Sum of squared entries (a squared Frobenius norm)."""
    x = a.data
    _check_finite("sum_sq", x)
    return _make(np.asarray(np.vdot(x, x)), (a,), lambda g: (2.0 * g * x,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    _check_finite("softmax", x)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine."""
    x = a.data
    _check_finite("layer_norm", x)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data if gamma is not None else None
    y = xhat if gd is None else xhat * gd
    if beta is not None:
        y = y + beta.data
    inputs = [a] + [t for t in (gamma, beta) if t is not None]

    def backward(g):
        dxhat = g if gd is None else g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        out = [dx]
        if gamma is not None:
            out.append(_reduce_to(g * xhat, gd.shape))
        if beta is not None:
            out.append(_reduce_to(g, beta.shape))
        return out

    return _make(y, inputs, backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing with scatter-add gradient."""
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.asarray(a.data[index]), (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


# ---------------------------------------------------------------------------
# fused layers
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over axis 1 of a (batch, time, channels) input.

    ``w`` has shape (kernel, in_channels, out_channels); padding is zeros on
    both ends of the time axis.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise DimensionError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    k, cin, cout = w.shape
    b, t, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    tp = xp.shape[1]
    if tp < k:
        raise DimensionError(f"conv1d: kernel {k} longer than padded input {tp}")
    tout = (tp - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]
    # (b, tout, cin, k) -> (b*tout, k*cin)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * tout, k * cin)
    w2 = w.data.reshape(k * cin, cout)
    y = (cols @ w2).reshape(b, tout, cout)

    def backward(g):
        g2 = g.reshape(b * tout, cout)
        gw = (cols.T @ g2).reshape(k, cin, cout)
        if not x.requires_grad:
            return None, gw
        gcols = (g2 @ w2.T).reshape(b, tout, k, cin)
        gxp = np.zeros_like(xp)
        span = stride * (tout - 1) + 1
        for j in range(k):
            gxp[:, j:j + span:stride, :] += gcols[:, :, j, :]
        gx = gxp[:, padding:padding + t, :] if padding else gxp
        return gx, gw

    return _make(y, (x, w), backward)


def bce(p: Tensor, y, eps: float = 1e-7) -> Tensor:
    """Element-wise binary cross-entropy on probabilities clamped to [eps, 1-eps]."""
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=p.dtype)
    pd = p.data
    pc = np.clip(pd, eps, 1.0 - eps)
    loss = -(yd * np.log(pc) + (1.0 - yd) * np.log1p(-pc))
    inside = (pd >= eps) & (pd <= 1.0 - eps)

    def backward(g):
        return (g * inside * (pc - yd) / (pc * (1.0 - pc)),)

    return _make(loss.astype(pd.dtype, copy=False), (p,), backward)
