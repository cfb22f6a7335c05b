"""Minimal dense tensor library with reverse-mode automatic differentiation.

Every tensor wraps a numpy array. Operations that involve at least one
tensor with ``requires_grad`` record their parents and a local gradient rule;
:func:`backward` replays those rules in reverse topological order.

Forward arithmetic defaults to float32. Tensors built from float64 arrays stay
in float64, which is what the finite-difference checks rely on.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError, NumericError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _active_tapes() -> list:
    tapes = getattr(_state, "tapes", None)
    if tapes is None:
        tapes = _state.tapes = []
    return tapes


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block (used for inference)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
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

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # --------------------------------------------------------------- operators
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x: ArrayLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is not None:
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(x)


def _result_dtype(*ts: Tensor):
    for t in ts:
        if t.data.dtype == np.float64:
            return np.float64
    return np.float32


def _coerce(*xs: ArrayLike) -> list:
    """Wrap non-tensors so they adopt the precision of the tensor operands."""
    tensors = [x for x in xs if isinstance(x, Tensor)]
    dtype = _result_dtype(*tensors) if tensors else np.float32
    return [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype)) for x in xs]


def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        for tape in _active_tapes():
            tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes, numpy-style batch broadcasting."""
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dims, got shape {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T (+ bias)`` with ``weight`` stored as [out, in]."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    x2 = x.data.reshape(-1, weight.shape[1])
    out = x2 @ weight.data.T
    if bias is not None:
        out += bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[0],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


# --------------------------------------------------------------- elementwise
def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    ts = _coerce(*tensors)
    if not ts:
        raise DimensionError("concat: nothing to concatenate")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[d] != ts[0].shape[d] for d in range(t.ndim) if d != ax
        ):
            raise DimensionError(
                f"concat: shapes {[x.shape for x in ts]} disagree outside axis {axis}"
            )
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = _coerce(*tensors)
    if len({t.shape for t in ts}) != 1:
        raise DimensionError(f"stack: shapes differ {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _make(out, tuple(ts), backward)


def take(a: Tensor, index) -> Tensor:
    """Numpy indexing with a scatter-add backward rule."""
    out = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, slice, type(Ellipsis))) or p is None for p in parts)

    def backward(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _make(np.array(out, copy=True), (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; gradients scatter back into the used rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"embedding: id out of range for table of {weight.shape[0]} rows")
    out = weight.data[ids]

    def backward(g):
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (grad,)

    return _make(out, (weight,), backward)


def pick(a: Tensor, ids) -> Tensor:
    """Select ``a[..., ids[...]]`` along the last axis (e.g. gold-token log-probs)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != a.shape[:-1]:
        raise DimensionError(f"pick: index shape {ids.shape} does not match {a.shape[:-1]}")
    idx = np.expand_dims(ids, -1)
    out = np.take_along_axis(a.data, idx, axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, np.expand_dims(g, -1), axis=-1)
        return (grad,)

    return _make(out, (a,), backward)


# ------------------------------------------------------------------- softmax
def _check_softmax_input(x: Tensor) -> None:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax: empty input of shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: input contains non-finite values")


def softmax(x: ArrayLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis.

    Entries where ``mask`` is 0 behave as a score of minus infinity: their
    output is exactly zero and they receive no gradient.
    """
    (x,) = _coerce(x)
    _check_softmax_input(x)
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    _check_softmax_input(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------- LSTM
def _lstm_pointwise(pre: Tensor, cell: Tensor) -> Tensor:
    """Gate nonlinearities of one LSTM step.

    ``pre`` holds the pre-activations in gate order (input, forget, output,
    candidate). Returns ``[hidden', cell']`` concatenated on the last axis.
    """
    h = cell.shape[-1]
    if pre.shape[-1] != 4 * h:
        raise DimensionError(f"lstm: pre-activation {pre.shape} does not match cell {cell.shape}")
    p = pre.data
    i = _sigmoid(p[..., :h])
    f = _sigmoid(p[..., h : 2 * h])
    o = _sigmoid(p[..., 2 * h : 3 * h])
    g = np.tanh(p[..., 3 * h :])
    c_new = f * cell.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    def backward(grad):
        gh, gc = grad[..., :h], grad[..., h:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * cell.data * f * (1.0 - f),
                gh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=-1,
        )
        return _unbroadcast(dpre, pre.shape), _unbroadcast(dc * f, cell.shape)

    return _make(np.concatenate([h_new, c_new], axis=-1), (pre, cell), backward)


def lstm_cell(state, x: Tensor, weights) -> tuple:
    """One step of a standard four-gate LSTM.

    ``state`` is ``(hidden, cell)``; ``weights`` is ``(W, U, b)`` with
    ``W: [4h, d]``, ``U: [4h, h]`` and ``b: [4h]``. Works on any number of
    leading batch axes.
    """
    hidden, cell = state
    W, U, b = weights
    h = hidden.shape[-1]
    if W.shape[0] != 4 * h or U.shape != (4 * h, h) or b.shape != (4 * h,):
        raise DimensionError(
            f"lstm_cell: weights {W.shape}, {U.shape}, {b.shape} inconsistent with hidden size {h}"
        )
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"lstm_cell: input {x.shape} does not match W {W.shape}")
    pre = add(linear(x, W, b), linear(hidden, U))
    out = _lstm_pointwise(pre, cell)
    return out[..., :h], out[..., h:]


def windows(alpha: Tensor, k: int) -> Tensor:
    """Sliding windows of radius ``k`` over the last axis, zero-padded.

    ``alpha: [..., S]`` becomes ``[..., S, 2k+1]`` with
    ``out[..., i, p] = alpha[..., i - k + p]`` when in range, else 0.
    """
    if k < 0:
        raise ContractError(f"window radius must be >= 0, got {k}")
    S = alpha.shape[-1]
    width = 2 * k + 1
    pad = [(0, 0)] * (alpha.ndim - 1) + [(k, k)]
    padded = np.pad(alpha.data, pad)
    out = np.lib.stride_tricks.sliding_window_view(padded, width, axis=-1).copy()

    def backward(g):
        gp = np.zeros(padded.shape, dtype=g.dtype)
        for p in range(width):
            gp[..., p : p + S] += g[..., p]
        return (gp[..., k : k + S],)

    return _make(out, (alpha,), backward)


# ------------------------------------------------------------------ backward
class GradientTape:
    """Records graph nodes in forward order while active.

    Use as a context manager; :meth:`backward` replays the recorded nodes in
    reverse, which visits each node after all of its consumers.
    """

    def __init__(self):
        self.nodes: list = []

    def __enter__(self) -> "GradientTape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes().remove(self)

    def backward(self, loss: Tensor) -> None:
        backward(loss, tape=self)


def _topological_order(loss: Tensor) -> list:
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, tape: Optional[GradientTape] = None) -> None:
    """Populate ``.grad`` of every leaf tensor that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` buffers, so a tensor used
    several times (or across several calls) receives the sum.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if tape is not None:
        if loss not in tape.nodes:
            raise ContractError("loss was not recorded on the given tape")
        order = tape.nodes[: tape.nodes.index(loss) + 1]
    else:
        order = _topological_order(loss)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                # leaf: accumulate straight into its buffer
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
