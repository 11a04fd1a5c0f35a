"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations the verification network needs are provided: elementwise
arithmetic, matrix products, sigmoid/tanh/PReLU, valid 1-D convolution, LSTM
(both a composable single step and a fused full-sequence op), time pooling,
log-softmax and indexing.

Shapes are checked strictly. The only implicit broadcasts are a scalar operand
in elementwise arithmetic, :func:`add_bias` over the last axis, the PReLU slope
over its channel axis and the convolution bias over output channels.

Gradients accumulate into ``Tensor.grad`` of leaf tensors on every call to
:meth:`Tensor.backward`; callers reset them with :meth:`Tensor.zero_grad`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyBatchError, ShapeError, UtteranceTooShortError

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "neg",
    "add_bias",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "prelu",
    "conv1d",
    "lstm_step",
    "lstm_forward",
    "mean_over_time",
    "tsum",
    "tmean",
    "transpose",
    "reshape",
    "concat",
    "log_softmax",
    "numerical_grad",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An n-d float64 array that can take part in a gradient tape.

    Parameters
    ----------
    data : array-like
        Values; copied into a C-contiguous float64 buffer.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad`` for this leaf.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self) -> "Tensor":
        return tmean(self)

    # -- reverse mode -------------------------------------------------------
    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Raises
        ------
        ShapeError
            If this tensor is not a single value.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=np.float64)
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# -- elementwise arithmetic -------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "sub")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` of shape ``(x.shape[-1],)`` broadcast over leading axes."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def backward(g):
        gb = g.reshape(-1, b.shape[0]).sum(axis=0) if b.requires_grad else None
        return g, gb

    return _make(x.data + b.data, (x, b), backward, "add_bias")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``a[..., m, k]`` and ``b[k, n]``.

    A leading batch axis on ``a`` is allowed; ``b`` must be 2-D.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# -- nonlinearities -----------------------------------------------------------
def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = _stable_sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def prelu(x: Tensor, a: Tensor, axis: int = -2) -> Tensor:
    """Parametric ReLU with one learnable slope per channel.

    ``a`` has either a single element (shared slope) or ``x.shape[axis]``
    elements. The default channel axis suits ``(..., C, T)`` feature maps.
    """
    x, a = _as_tensor(x), _as_tensor(a)
    if a.size == 1:
        slope = a.data.reshape(())
        bshape = None
    else:
        if x.ndim == 0 or a.ndim != 1 or x.shape[axis] != a.shape[0]:
            raise ShapeError(f"prelu: slope {a.shape} does not match axis {axis} of {x.shape}")
        bshape = [1] * x.ndim
        bshape[axis] = a.shape[0]
        slope = a.data.reshape(bshape)
    pos = x.data > 0
    neg_part = np.where(pos, 0.0, x.data)
    y = np.where(pos, x.data, slope * x.data)

    def backward(g):
        gx = g * np.where(pos, 1.0, slope) if x.requires_grad else None
        ga = None
        if a.requires_grad:
            contrib = g * neg_part
            if bshape is None:
                ga = np.asarray(contrib.sum()).reshape(a.shape)
            else:
                axes = tuple(i for i in range(x.ndim) if i != axis % x.ndim)
                ga = contrib.sum(axis=axes)
        return gx, ga

    return _make(y, (x, a), backward, "prelu")


# -- convolution ---------------------------------------------------------------
def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid cross-correlation along time: padding 0, stride 1.

    ``x`` is ``(C_in, T)`` or ``(B, C_in, T)``, ``w`` is ``(C_out, C_in, K)``
    and ``b`` is ``(C_out,)``. Output time length is ``T - K + 1``.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv1d: bias {b.shape} does not match {w.shape[0]} output channels")
    n_batch, c_in, n_time = xd.shape
    c_out, _, k = w.shape
    if n_time < k:
        raise UtteranceTooShortError(f"conv1d needs at least {k} frames, got {n_time}")
    t_out = n_time - k + 1
    w_flat = w.data.reshape(c_out, c_in * k)

    def im2col(arr):
        win = sliding_window_view(arr, k, axis=2)  # (B, C_in, T', K)
        return win.transpose(0, 2, 1, 3).reshape(n_batch * t_out, c_in * k)

    y = (im2col(xd) @ w_flat.T + b.data).reshape(n_batch, t_out, c_out).transpose(0, 2, 1)
    if squeeze:
        y = y[0]

    def backward(g):
        g3 = g[None] if squeeze else g
        g2 = g3.transpose(0, 2, 1).reshape(n_batch * t_out, c_out)
        gw = (g2.T @ im2col(xd)).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w_flat).reshape(n_batch, t_out, c_in, k)
            gx = np.zeros_like(xd)
            for j in range(k):
                gx[:, :, j:j + t_out] += dcols[:, :, :, j].transpose(0, 2, 1)
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    return _make(y, (x, w, b), backward, "conv1d")


# -- recurrent -------------------------------------------------------------------
def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, w_ih: Tensor, w_hh: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update built from primitive ops.

    Gate columns of ``w_ih``/``w_hh``/``b`` are ordered input, forget,
    candidate, output.
    """
    hidden = w_hh.shape[0]
    z = add_bias(matmul(x_t, w_ih) + matmul(h_prev, w_hh), b)
    i = sigmoid(z[..., 0:hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:4 * hidden])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def lstm_forward(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over ``x[T, I]`` or ``x[B, T, I]`` from zero state.

    Returns the hidden sequence ``H`` with the same leading axes as ``x`` and
    last axis ``hidden``. A single tape node; backward is hand-written BPTT.
    """
    x, w_ih, w_hh, b = map(_as_tensor, (x, w_ih, w_hh, b))
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w_ih.ndim != 2 or xd.shape[2] != w_ih.shape[0]:
        raise ShapeError(f"lstm: input {x.shape} incompatible with w_ih {w_ih.shape}")
    hidden = w_hh.shape[0]
    if w_hh.shape != (hidden, 4 * hidden) or w_ih.shape[1] != 4 * hidden or b.shape != (4 * hidden,):
        raise ShapeError("lstm: weight shapes inconsistent with hidden size")
    n_batch, n_time, _ = xd.shape

    xw = xd @ w_ih.data + b.data  # (B, T, 4H)
    gates = np.empty((n_batch, n_time, 4 * hidden))
    cells = np.empty((n_batch, n_time, hidden))
    tanh_c = np.empty((n_batch, n_time, hidden))
    hs = np.empty((n_batch, n_time, hidden))
    h = np.zeros((n_batch, hidden))
    c = np.zeros((n_batch, hidden))
    whh = w_hh.data
    for t in range(n_time):
        z = xw[:, t] + h @ whh
        act = gates[:, t]
        act[:, :2 * hidden] = _stable_sigmoid(z[:, :2 * hidden])
        act[:, 2 * hidden:3 * hidden] = np.tanh(z[:, 2 * hidden:3 * hidden])
        act[:, 3 * hidden:] = _stable_sigmoid(z[:, 3 * hidden:])
        c = act[:, hidden:2 * hidden] * c + act[:, :hidden] * act[:, 2 * hidden:3 * hidden]
        cells[:, t] = c
        tanh_c[:, t] = np.tanh(c)
        h = act[:, 3 * hidden:] * tanh_c[:, t]
        hs[:, t] = h
    out = hs[0] if squeeze else hs

    def backward(g):
        g3 = g[None] if squeeze else g
        dz = np.empty_like(gates)
        dh_next = np.zeros((n_batch, hidden))
        dc_next = np.zeros((n_batch, hidden))
        for t in range(n_time - 1, -1, -1):
            act = gates[:, t]
            i_g = act[:, :hidden]
            f_g = act[:, hidden:2 * hidden]
            c_g = act[:, 2 * hidden:3 * hidden]
            o_g = act[:, 3 * hidden:]
            c_prev = cells[:, t - 1] if t > 0 else np.zeros((n_batch, hidden))
            dh = g3[:, t] + dh_next
            dc = dh * o_g * (1.0 - tanh_c[:, t] ** 2) + dc_next
            d = dz[:, t]
            d[:, :hidden] = dc * c_g * i_g * (1.0 - i_g)
            d[:, hidden:2 * hidden] = dc * c_prev * f_g * (1.0 - f_g)
            d[:, 2 * hidden:3 * hidden] = dc * i_g * (1.0 - c_g ** 2)
            d[:, 3 * hidden:] = dh * tanh_c[:, t] * o_g * (1.0 - o_g)
            dc_next = dc * f_g
            dh_next = d @ whh.T
        dz2 = dz.reshape(n_batch * n_time, 4 * hidden)
        gx = None
        if x.requires_grad:
            gx = dz @ w_ih.data.T
            if squeeze:
                gx = gx[0]
        gw_ih = xd.reshape(-1, xd.shape[2]).T @ dz2 if w_ih.requires_grad else None
        gw_hh = None
        if w_hh.requires_grad:
            h_prev = np.zeros_like(hs)
            h_prev[:, 1:] = hs[:, :-1]
            gw_hh = h_prev.reshape(-1, hidden).T @ dz2
        gb = dz2.sum(axis=0) if b.requires_grad else None
        return gx, gw_ih, gw_hh, gb

    return _make(out, (x, w_ih, w_hh, b), backward, "lstm")


# -- reductions and reshaping ------------------------------------------------------
def mean_over_time(x: Tensor) -> Tensor:
    """Global average pooling over the last (time) axis."""
    x = _as_tensor(x)
    n_time = x.shape[-1] if x.ndim else 0
    if n_time == 0:
        raise EmptyBatchError("mean_over_time: empty time axis")

    def backward(g):
        return (np.repeat(g[..., None] / n_time, n_time, axis=-1),)

    return _make(x.data.mean(axis=-1), (x,), backward, "mean_over_time")


def tsum(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.size == 0:
        raise EmptyBatchError("mean of an empty tensor")
    n = x.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full(x.shape, g / n),), "mean")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptyBatchError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def _getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.asarray(x.data[index]), (x,), backward, "getitem")


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax over the last axis."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), backward, "log_softmax")


# -- finite differences -------------------------------------------------------------
def numerical_grad(fn: Callable[[], Tensor], param: Tensor, index: tuple, h: float = 1e-5) -> float:
    """Central finite difference of scalar ``fn()`` w.r.t. ``param.data[index]``.

    ``param.data`` is perturbed in place and restored.
    """
    original = param.data[index]
    try:
        param.data[index] = original + h
        plus = fn().item()
        param.data[index] = original - h
        minus = fn().item()
    finally:
        param.data[index] = original
    return (plus - minus) / (2.0 * h)
