"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op records a node on the thread's active :class:`Tape`
when at least one input requires a gradient. ``backward`` walks that tape
once, in reverse execution order. Leaf tensors accumulate into ``.grad``.

Shapes follow numpy broadcasting; gradients are summed back down to the
input shape.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "TapeError", "no_grad", "as_tensor",
    "elementwise", "add", "sub", "mul", "div", "scale", "neg", "exp", "log",
    "relu", "sigmoid", "square", "clip", "matmul", "linear", "conv1d",
    "reduce", "sum", "mean", "maximum_over", "concat", "take", "reshape",
    "cosine_similarity", "log_softmax", "softmax", "backward",
]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops, consumed by a single backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def record(self, node: _Node) -> None:
        if self.consumed:
            # a fresh forward after backward starts a new unit of work
            self.reset()
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _state().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state().stack.pop()

    def backward(self, loss: "Tensor") -> None:
        if self.consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.consumed = True
        seed = np.ones_like(loss.data)
        if loss._node is None:
            if loss.requires_grad:
                loss._accumulate(seed)
            return
        grads: dict[int, np.ndarray] = {id(loss): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp._accumulate(ig)
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + ig
                    else:
                        grads[key] = ig


class _State(threading.local):
    def __init__(self):
        self.stack: list[Tape] = [Tape()]
        self.enabled = True


_local = _State()


def _state() -> _State:
    return _local


def current_tape() -> Tape:
    return _state().stack[-1]


@contextmanager
def no_grad():
    st = _state()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node: Optional[_Node] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._tape = None
    out.name = None
    st = _state()
    out.requires_grad = st.enabled and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = st.stack[-1]
        node = _Node(op, tuple(inputs), out, backward_fn)
        tape.record(node)
        out._node = node
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    tape = loss._tape if loss._tape is not None else current_tape()
    tape.backward(loss)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "add")
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "sub")
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "mul")
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "div")
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return scale(a, -1.0)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "exp": exp, "log": log,
    "relu": relu, "sigmoid": sigmoid,
}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name. ``scale`` takes a float ``b``."""
    a = as_tensor(a)
    if op == "scale":
        return scale(a, b)
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    fn = _ELEMENTWISE[op]
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", a.data @ b.data, (a, b), bw)


def linear(x, W, b=None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``; leading axes are batch."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {W.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} vs weight {W.shape}")
    out = x.data @ W.data
    if b is not None:
        out = out + b.data
    lead = x.shape[:-1]

    def bw(g):
        gx = g @ W.data.T
        g2 = g.reshape(-1, g.shape[-1])
        gW = x.data.reshape(-1, x.shape[-1]).T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx.reshape(lead + (W.shape[0],)), gW, gb)

    inputs = (x, W) if b is None else (x, W, b)
    return _make("linear", out, inputs, bw)


def conv1d(x, kernels, bias=None, padding: str = "same", dilation: int = 1) -> Tensor:
    """Temporal convolution of ``x[..., L, Cin]`` with ``kernels[k, Cin, Cout]``.

    ``same`` centres the kernel (k odd); ``causal`` left-pads so output ``t``
    sees only inputs ``<= t``. Output length equals ``L`` in both modes.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    if kernels.ndim != 3 or x.shape[-1] != kernels.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} vs kernels {kernels.shape}")
    k, cin, cout = kernels.shape
    L = x.shape[-2]
    span = (k - 1) * dilation
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("same padding needs an odd kernel size")
        left = right = span // 2
    elif padding == "causal":
        left, right = span, 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if k > L + left + right:
        raise ShapeError(f"conv1d: kernel {k} larger than padded length {L + left + right}")

    lead = x.shape[:-2]
    pad = [(0, 0)] * len(lead) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    offsets = [i * dilation for i in range(k)]
    cols = np.concatenate([xp[..., o:o + L, :] for o in offsets], axis=-1)
    Wf = kernels.data.reshape(k * cin, cout)
    out = cols @ Wf
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def bw(g):
        gW = cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)
        gcols = g @ Wf.T
        gxp = np.zeros_like(xp)
        for i, o in enumerate(offsets):
            gxp[..., o:o + L, :] += gcols[..., i * cin:(i + 1) * cin]
        gx = gxp[..., left:left + L, :]
        gb = g.reshape(-1, cout).sum(axis=0) if bias is not None else None
        return (gx, gW.reshape(k, cin, cout), gb)

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _make("conv1d", out, inputs, bw)


# -- reductions and shape ops ----------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    if n == 0:
        raise ShapeError("mean over an empty axis")
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def maximum_over(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal index."""
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError("max over an empty axis")
    idx = np.argmax(x.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(x.data, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, idx_k, gk, axis=axis)
        return (gx,)

    return _make("max", out, (x,), bw)


def reduce(x: Tensor, mode: str = "mean", axis: int = -2) -> Tensor:
    """Pool over the time axis (second to last by default)."""
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError("reduce over an empty axis")
    if mode == "mean":
        return mean(x, axis=axis)
    if mode == "max":
        return maximum_over(x, axis=axis)
    raise ValueError(f"unknown reduce mode {mode!r}")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for i in range(len(xs)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _make("concat", np.concatenate([t.data for t in xs], axis=axis), xs, bw)


def take(x: Tensor, idx) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in backward."""
    x = as_tensor(x)
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make("take", np.array(out, dtype=np.float64), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# -- similarity and softmax ------------------------------------------------

def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """Cosine along the last axis with each norm clamped below by ``eps``."""
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "cosine_similarity")
    na_raw = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    nb_raw = np.sqrt(np.sum(b.data * b.data, axis=-1, keepdims=True))
    na = np.maximum(na_raw, eps)
    nb = np.maximum(nb_raw, eps)
    dot = np.sum(a.data * b.data, axis=-1, keepdims=True)
    cos = dot / (na * nb)
    # only an unclamped norm depends on its vector
    da_norm = np.where(na_raw > eps, 1.0, 0.0)
    db_norm = np.where(nb_raw > eps, 1.0, 0.0)

    def bw(g):
        g = np.expand_dims(g, -1)
        ga = g * (b.data / (na * nb) - da_norm * cos * a.data / (na * na))
        gb = g * (a.data / (na * nb) - db_norm * cos * b.data / (nb * nb))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("cosine", cos[..., 0], (a, b), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make("softmax", p, (x,), bw)
