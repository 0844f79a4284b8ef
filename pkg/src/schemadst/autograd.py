"""Dense tensors with reverse-mode differentiation.

Values are float64 numpy arrays. Every differentiable operation is a free
function: it computes the forward value, and when a GradientTape is active
and the result depends on a trainable tensor, records a tape entry holding
a replayable forward closure and a backward closure. Ops never mutate
their inputs; tensors are value-semantic after construction.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, NumericError, ShapeError

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Immutable dense array node of the computation graph."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # a single reduction: any NaN/Inf entry makes the sum non-finite
        if not math.isfinite(float(arr.sum())):
            raise NumericError(f"non-finite entries in tensor {name or '<anonymous>'}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Entry:
    __slots__ = ("inputs", "output", "forward", "backward")

    def __init__(self, inputs, output, forward, backward):
        self.inputs = inputs
        self.output = output
        self.forward = forward
        self.backward = backward


_TAPES = threading.local()


def _tape_stack() -> list["GradientTape"]:
    stack = getattr(_TAPES, "stack", None)
    if stack is None:
        stack = []
        _TAPES.stack = stack
    return stack


class GradientTape:
    """Recorded operation graph for one forward pass.

    Use as a context manager around the forward computation; afterwards
    `backward(loss, tape)` yields gradients with respect to every tensor
    constructed with requires_grad=True that the loss depends on.
    """

    def __init__(self):
        self._entries: list[_Entry] = []

    def __enter__(self) -> "GradientTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._entries)

    def replay(self) -> None:
        """Recompute every recorded op in order (bit-identical forward)."""
        for entry in self._entries:
            entry.output.data = entry.forward(*(t.data for t in entry.inputs))


def _record(inputs: Sequence[Tensor], output: Tensor, forward, backward) -> None:
    stack = _tape_stack()
    if stack and output.requires_grad:
        stack[-1]._entries.append(_Entry(tuple(inputs), output, forward, backward))


def _result(arr: np.ndarray, *parents: Tensor) -> Tensor:
    return Tensor(arr, requires_grad=any(p.requires_grad for p in parents))


class Gradients:
    """Gradient lookup keyed by tensor identity.

    Tensors the loss does not depend on are reported as missing (zero
    gradient), distinct from a numeric failure in backpropagation.
    """

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def get(self, t: Tensor) -> np.ndarray | None:
        return self._grads.get(id(t))

    def get_or_zeros(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g


def backward(loss: Tensor, tape: GradientTape) -> Gradients:
    """Reverse-mode gradients of a scalar loss over one tape."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape._entries):
        g_out = grads.pop(id(entry.output), None)
        if g_out is None:
            continue
        for t, g in zip(entry.inputs, entry.backward(g_out)):
            if g is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = g if acc is None else acc + g
    return Gradients(grads)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fwd(x, y):
        return x + y

    out = _result(fwd(a.data, b.data), a, b)
    a_shape, b_shape = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    _record((a, b), out, fwd, bwd)
    return out


def sub(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fwd(x, y):
        return x - y

    out = _result(fwd(a.data, b.data), a, b)
    a_shape, b_shape = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

    _record((a, b), out, fwd, bwd)
    return out


def mul(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fwd(x, y):
        return x * y

    out = _result(fwd(a.data, b.data), a, b)
    a_data, b_data = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    _record((a, b), out, fwd, bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product supporting the 1D/2D combinations numpy's @ allows."""
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul needs 1D or 2D operands, got {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")

    def fwd(x, y):
        return x @ y

    out = _result(fwd(a.data, b.data), a, b)
    a_data, b_data = a.data, b.data

    def bwd(g):
        if a_data.ndim == 2 and b_data.ndim == 2:
            return g @ b_data.T, a_data.T @ g
        if a_data.ndim == 2 and b_data.ndim == 1:
            return np.outer(g, b_data), a_data.T @ g
        if a_data.ndim == 1 and b_data.ndim == 2:
            return b_data @ g, np.outer(a_data, g)
        return g * b_data, g * a_data

    _record((a, b), out, fwd, bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    def fwd(x):
        return x.T

    out = _result(fwd(a.data), a)
    _record((a,), out, fwd, lambda g: (g.T,))
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def fwd(x):
        return x.reshape(shape)

    out = _result(fwd(a.data), a)
    old_shape = a.shape
    _record((a,), out, fwd, lambda g: (g.reshape(old_shape),))
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    parts = tuple(parts)

    def fwd(*arrays):
        return np.concatenate(arrays, axis=axis)

    out = _result(fwd(*(p.data for p in parts)), *parts)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    _record(parts, out, fwd, bwd)
    return out


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a 2D tensor; duplicated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise ShapeError(f"take_rows needs a 2D tensor, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"row index out of range for shape {a.shape}")

    def fwd(x):
        return x[idx]

    out = _result(fwd(a.data), a)
    n_rows, n_cols = a.shape

    def bwd(g):
        gx = np.zeros((n_rows, n_cols))
        np.add.at(gx, idx, g)
        return (gx,)

    _record((a,), out, fwd, bwd)
    return out


def row(a: Tensor, i: int) -> Tensor:
    return reshape(take_rows(a, [i]), (a.shape[1],))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"slice_cols needs a 2D tensor, got {a.shape}")

    def fwd(x):
        return x[:, start:stop]

    out = _result(fwd(a.data), a)
    n_rows, n_cols = a.shape

    def bwd(g):
        gx = np.zeros((n_rows, n_cols))
        gx[:, start:stop] = g
        return (gx,)

    _record((a,), out, fwd, bwd)
    return out


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a vector as the rows of an n-row matrix."""
    if v.ndim != 1:
        raise ShapeError(f"tile_rows needs a vector, got {v.shape}")

    def fwd(x):
        return np.tile(x, (n, 1))

    out = _result(fwd(v.data), v)
    _record((v,), out, fwd, lambda g: (g.sum(axis=0),))
    return out


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor) -> Tensor:
    def fwd(x):
        return np.asarray(x.sum())

    out = _result(fwd(a.data), a)
    shape = a.shape
    _record((a,), out, fwd, lambda g: (np.broadcast_to(g, shape).copy(),))
    return out


def tmean(a: Tensor) -> Tensor:
    def fwd(x):
        return np.asarray(x.mean())

    out = _result(fwd(a.data), a)
    shape, size = a.shape, a.data.size

    def bwd(g):
        return (np.broadcast_to(g / size, shape).copy(),)

    _record((a,), out, fwd, bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def _softmax_1d(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax(v: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtraction before exponentiation)."""
    if v.ndim != 1 or v.shape[0] == 0:
        raise DomainError(f"softmax needs a non-empty vector, got shape {v.shape}")

    out = _result(_softmax_1d(v.data), v)
    y = out.data

    def bwd(g):
        return (y * (g - float(g @ y)),)

    _record((v,), out, _softmax_1d, bwd)
    return out


def softmax_rows(m: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a matrix; masked columns get exactly zero weight."""
    if m.ndim != 2 or m.shape[1] == 0:
        raise DomainError(f"softmax_rows needs a non-empty matrix, got shape {m.shape}")
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)
        if mask.shape != (m.shape[1],):
            raise ShapeError(f"key mask shape {mask.shape} does not match columns {m.shape[1]}")
        if not mask.any():
            raise DomainError("softmax_rows with all columns masked")

    def fwd(x):
        if mask is None:
            shifted = x - x.max(axis=1, keepdims=True)
            e = np.exp(shifted)
        else:
            cols = x[:, mask]
            shifted = x - cols.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            e[:, ~mask] = 0.0
        return e / e.sum(axis=1, keepdims=True)

    out = _result(fwd(m.data), m)
    y = out.data

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    _record((m,), out, fwd, bwd)
    return out


def sigmoid(x) -> Tensor:
    """Numerically stable logistic function, elementwise."""
    x = as_tensor(x)

    def fwd(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    out = _result(fwd(x.data), x)
    y = out.data
    _record((x,), out, fwd, lambda g: (g * y * (1.0 - y),))
    return out


def gelu(x, approximate: bool = False) -> Tensor:
    """x * Phi(x) with the exact normal CDF; tanh approximation is opt-in."""
    x = as_tensor(x)

    if approximate:

        def fwd(v):
            inner = _SQRT_2_OVER_PI * (v + 0.044715 * v**3)
            return 0.5 * v * (1.0 + np.tanh(inner))

        def bwd_factory(v):
            inner = _SQRT_2_OVER_PI * (v + 0.044715 * v**3)
            t = np.tanh(inner)
            d_inner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * v**2)
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner

    else:

        def fwd(v):
            return v * ndtr(v)

        def bwd_factory(v):
            return ndtr(v) + v * _INV_SQRT_2PI * np.exp(-0.5 * v**2)

    out = _result(fwd(x.data), x)
    deriv = bwd_factory(x.data)
    _record((x,), out, fwd, lambda g: (g * deriv,))
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of x to zero mean / unit variance, then scale+shift."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2D tensor, got {x.shape}")
    h = x.shape[1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(f"layer_norm scale/shift must have shape ({h},)")

    def fwd(v, g_, b_):
        mu = v.mean(axis=1, keepdims=True)
        var = v.var(axis=1, keepdims=True)
        return (v - mu) / np.sqrt(var + eps) * g_ + b_

    out = _result(fwd(x.data, gamma.data, beta.data), x, gamma, beta)
    v = x.data
    mu = v.mean(axis=1, keepdims=True)
    sigma = np.sqrt(v.var(axis=1, keepdims=True) + eps)
    xhat = (v - mu) / sigma
    gamma_data = gamma.data

    def bwd(g):
        d_gamma = (g * xhat).sum(axis=0)
        d_beta = g.sum(axis=0)
        d_xhat = g * gamma_data
        d_x = (
            d_xhat
            - d_xhat.mean(axis=1, keepdims=True)
            - xhat * (d_xhat * xhat).mean(axis=1, keepdims=True)
        ) / sigma
        return d_x, d_gamma, d_beta

    _record((x, gamma, beta), out, fwd, bwd)
    return out


# ---------------------------------------------------------------------------
# losses


def cross_entropy_with_logits(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], computed via logsumexp."""
    if logits.ndim != 1 or logits.shape[0] == 0:
        raise DomainError(f"cross entropy needs a non-empty logit vector, got {logits.shape}")
    if not 0 <= target < logits.shape[0]:
        raise ShapeError(f"target {target} out of range for {logits.shape[0]} classes")

    def fwd(x):
        m = x.max()
        return np.asarray(m + np.log(np.exp(x - m).sum()) - x[target])

    out = _result(fwd(logits.data), logits)
    probs = _softmax_1d(logits.data)

    def bwd(g):
        grad = probs.copy()
        grad[target] -= 1.0
        return (grad * g,)

    _record((logits,), out, fwd, bwd)
    return out


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise stable BCE: max(x,0) - x*t + log1p(exp(-|x|))."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"targets shape {t.shape} does not match logits {logits.shape}")

    def fwd(x):
        return np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))

    out = _result(fwd(logits.data), logits)
    p = sigmoid(Tensor(logits.data)).data

    def bwd(g):
        return (g * (p - t),)

    _record((logits,), out, fwd, bwd)
    return out
