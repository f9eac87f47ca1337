"""Dense tensors with reverse-mode automatic differentiation.

The whole engine is small enough to audit by hand.  A :class:`Tensor` wraps a
row-major numpy array; every primitive is a plain function that computes the
forward value and, while a :class:`Tape` is active, registers a pullback that
routes the output gradient back to the inputs.  ``Tape.backward`` walks the
recorded operations in exact reverse order, so the topological ordering
invariant holds by construction.

Shapes are explicit.  The only implicit broadcast is a bias add over the last
axis; everything else must match exactly, which keeps each gradient rule a
one-liner that can be checked against finite differences.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

LOG_EPS = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense n-dimensional value that can participate in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        if isinstance(data, np.ndarray):
            arr = data if dtype is None else data.astype(dtype, copy=False)
        else:
            arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; all routed through the primitive functions below
    def __add__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)
    def __rmul__(self, other): return self.__mul__(other)
    def __neg__(self): return mul_scalar(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    if dtype is None and isinstance(data, np.ndarray):
        arr = np.array(data)                     # own copy, dtype preserved
    else:
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=True, name=name)


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=False)


# --------------------------------------------------------------------------
# tape machinery
# --------------------------------------------------------------------------

_TLS = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives for one forward pass.

    Confined to the thread that opened it.  Every record appears after the
    records that produced its inputs, so reverse iteration is a valid
    reverse topological order.
    """

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self, "tapes must be exited in LIFO order"
        stack.pop()

    def _record(self, inputs: tuple[Tensor, ...], output: Tensor, pullback: Callable) -> None:
        self._records.append((inputs, output, pullback))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor that ``loss`` depends on.

        ``loss`` must be a single-element tensor produced under this tape.
        Gradients accumulate; call :func:`zero_grads` between passes if a
        fresh result is wanted.
        """
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._records:
            raise RuntimeError("backward on an empty tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        else:
            loss.grad = loss.grad + np.ones_like(loss.data)
        for inputs, output, pullback in reversed(self._records):
            g = grads.get(id(output))
            if g is None:
                continue
            for inp, gi in zip(inputs, pullback(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.grad is None:
                    inp.grad = gi.copy()
                else:
                    inp.grad = inp.grad + gi


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from ``loss`` on the active tape."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward requires an active tape")
    tape.backward(loss)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _emit(inputs: tuple[Tensor, ...], out_data: np.ndarray, pullback: Callable) -> Tensor:
    """Wrap a forward result, recording the pullback when grads are wanted."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape._record(inputs, out, pullback)
    return out


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a bias broadcast over the last axis."""
    if a.shape == b.shape:
        def pullback(g):
            return g, g
        return _emit((a, b), a.data + b.data, pullback)
    # bias add: b has shape (n,) or (1, n) against a (..., n)
    if b.data.ndim <= a.data.ndim and b.data.size == a.shape[-1] and \
            b.data.reshape(-1).shape[0] == a.shape[-1]:
        bias_shape = b.shape

        def pullback(g):
            axes = tuple(range(g.ndim - 1))
            return g, g.sum(axis=axes).reshape(bias_shape)
        return _emit((a, b), a.data + b.data.reshape(-1), pullback)
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def pullback(g):
        return g, -g
    return _emit((a, b), a.data - b.data, pullback)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def pullback(g):
        return g * b.data, g * a.data
    return _emit((a, b), a.data * b.data, pullback)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def pullback(g):
        return (g * c,)
    return _emit((a,), a.data * c, pullback)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def pullback(g):
        return (g,)
    return _emit((a,), a.data + float(c), pullback)


def mul_rows(a: Tensor, row_weights: np.ndarray) -> Tensor:
    """Scale each row of a 2-d tensor by a fixed (non-differentiable) weight."""
    w = np.asarray(row_weights, dtype=a.dtype).reshape(-1, 1)
    if a.data.ndim != 2 or w.shape[0] != a.shape[0]:
        raise DimensionError(f"mul_rows: weights {w.shape} do not match rows of {a.shape}")

    def pullback(g):
        return (g * w,)
    return _emit((a,), a.data * w, pullback)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")

    def pullback(g):
        return g @ b.data.T, a.data.T @ g
    return _emit((a, b), a.data @ b.data, pullback)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-d tensor, got {a.shape}")

    def pullback(g):
        return (g.T,)
    return _emit((a,), a.data.T.copy(), pullback)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = a.shape

    def pullback(g):
        return (g.reshape(old),)
    return _emit((a,), a.data.reshape(shape), pullback)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other axes must agree exactly."""
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                i != axis and t.shape[i] != ref[i] for i in range(len(ref))):
            raise DimensionError(
                f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))
    return _emit(tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), pullback)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows (axis 0) or columns (axis 1); gradient scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    if axis not in (0, 1) or a.data.ndim != 2:
        raise DimensionError(f"take supports 2-d tensors on axis 0/1, got {a.shape}, axis {axis}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise IndexError(f"take: index out of range for axis {axis} of shape {a.shape}")
    out = np.take(a.data, idx, axis=axis)

    def pullback(g):
        gz = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(gz, idx, g)
        else:
            np.add.at(gz.T, idx, g.T)
        return (gz,)
    return _emit((a,), out, pullback)


def gather_pairs(a: Tensor, rows, cols) -> Tensor:
    """Pick ``a[rows[i], cols[i]]`` for each i; result has shape (len, 1)."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if a.data.ndim != 2 or r.shape != c.shape:
        raise DimensionError("gather_pairs needs a 2-d tensor and equal-length index lists")
    out = a.data[r, c].reshape(-1, 1)

    def pullback(g):
        gz = np.zeros_like(a.data)
        np.add.at(gz, (r, c), g.reshape(-1))
        return (gz,)
    return _emit((a,), out, pullback)


def tensor_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def pullback(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy() if np.ndim(g) == 0
                    else np.full(shape, g.reshape(()), dtype=g.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)
    return _emit((a,), a.data.sum(axis=axis, keepdims=keepdims), pullback)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a 2-d tensor, keeping shape (1, n)."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"mean_rows needs a non-empty 2-d tensor, got {a.shape}")
    n = a.shape[0]

    def pullback(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)
    return _emit((a,), a.data.mean(axis=0, keepdims=True), pullback)


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stabilized softmax along ``axis``.

    ``mask`` is a fixed boolean array broadcastable to ``a``; masked-out
    entries get probability exactly 0.  A slice with no unmasked entry
    yields an all-zero slice instead of NaN.
    """
    if a.shape[axis] == 0:
        raise DimensionError(f"softmax along an empty axis of shape {a.shape}")
    z = a.data
    if mask is None:
        m = z.max(axis=axis, keepdims=True)
        e = np.exp(z - m)
    else:
        mask_arr = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        neg = np.where(mask_arr, z, -np.inf)
        m = neg.max(axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.exp(np.where(mask_arr, z - m, -np.inf))
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom == 0.0, 1.0, denom)

    def pullback(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)
    return _emit((a,), y, pullback)


def sigmoid(a: Tensor) -> Tensor:
    z = np.clip(a.data, -709.0, 709.0)   # keeps exp inside float64 range
    y = 1.0 / (1.0 + np.exp(-z))

    def pullback(g):
        return (g * y * (1.0 - y),)
    return _emit((a,), y, pullback)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def pullback(g):
        return (g * pos,)
    return _emit((a,), np.where(pos, a.data, 0.0), pullback)


def log(a: Tensor, eps: float = LOG_EPS) -> Tensor:
    """Natural log with the argument clamped below at ``eps``."""
    clamped = np.maximum(a.data, eps)
    live = a.data >= eps

    def pullback(g):
        return (np.where(live, g / clamped, 0.0),)
    return _emit((a,), np.log(clamped), pullback)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gain.data.size != d or bias.data.size != d:
        raise DimensionError(
            f"layer_norm: gain/bias size must be {d}, got {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g_row = gain.data.reshape(-1)
    out = xhat * g_row + bias.data.reshape(-1)

    def pullback(g):
        dxhat = g * g_row
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes).reshape(gain.shape)
        dbias = g.sum(axis=axes).reshape(bias.shape)
        return dx, dgain, dbias
    return _emit((x, gain, bias), out, pullback)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def pullback(g):
        return (g * keep,)
    return _emit((x,), x.data * keep, pullback)


# --------------------------------------------------------------------------
# initializers
# --------------------------------------------------------------------------

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype or DEFAULT_DTYPE)


def small_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=None) -> np.ndarray:
    return (rng.normal(0.0, std, size=shape)).astype(dtype or DEFAULT_DTYPE)


def assert_finite(value: np.ndarray | float, label: str) -> None:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite value in {label}")
