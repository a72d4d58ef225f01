"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable op records itself on the active :class:`Tape` when any
input requires a gradient.  :func:`backward` replays the tape in reverse
execution order, accumulates gradients into the tensors that asked for them
and clears the tape.

Only the broadcasting actually used by the encoder and the objectives is
supported: a 1-D row vector added to every row of a matrix.  Everything else
must match shapes exactly.
"""

from __future__ import annotations

import contextlib
import threading
from collections import Counter
from typing import Callable, Iterable, Sequence

import numpy as np

EPS_NORM = 1e-12

diagnostics: Counter = Counter()

_DTYPE = np.float64
_STRICT = False


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


def set_strict(flag: bool) -> None:
    global _STRICT
    _STRICT = bool(flag)


def is_strict() -> bool:
    return _STRICT


@contextlib.contextmanager
def strict_numerics(flag: bool = True):
    old = _STRICT
    set_strict(flag)
    try:
        yield
    finally:
        set_strict(old)


class Tensor:
    """Dense array with an optional gradient buffer.

    ``grad`` exists iff ``requires_grad``; it is allocated as zeros on first
    access so that leaves always expose a same-shape buffer.
    """

    __slots__ = ("values", "requires_grad", "_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=_DTYPE) if not isinstance(values, np.ndarray) else values
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(_DTYPE)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def grad(self) -> np.ndarray | None:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        if not self.requires_grad:
            raise ValueError("tensor does not require grad")
        value = np.asarray(value, dtype=self.values.dtype)
        if value.shape != self.values.shape:
            raise ShapeError(f"grad shape {value.shape} != tensor shape {self.values.shape}")
        self._grad = value

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.values)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return subtract(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(np.array(values, dtype=_DTYPE), requires_grad=True, name=name)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def reachable_leaves(self, root: Tensor) -> list[Tensor]:
        """Tensors without a producing op that ``root`` depends on."""
        producer = {id(n.output): n for n in self.nodes}
        seen: set[int] = set()
        leaves: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            node = producer.get(id(t))
            if node is None:
                if t.requires_grad:
                    leaves.append(t)
            else:
                stack.extend(node.inputs)
        return leaves


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def using_tape(tape: Tape):
    prev = getattr(_local, "tape", None)
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


@contextlib.contextmanager
def no_grad():
    prev = getattr(_local, "disabled", False)
    _local.disabled = True
    try:
        yield
    finally:
        _local.disabled = prev


def _check_finite(op: str, arrays: Iterable[np.ndarray]) -> None:
    if not _STRICT:
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{op}: non-finite input")


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward_fn: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs) and not getattr(_local, "disabled", False)
    result = Tensor(out, requires_grad=needs)
    if needs:
        current_tape().record(_Node(op, inputs, result, backward_fn))
    return result


def backward(loss: Tensor, retain_tape: bool = False) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    The tape is cleared afterwards unless ``retain_tape`` is set, in which
    case a second backward from another root may reuse it.
    """
    if loss.values.size != 1 or loss.values.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = current_tape()
    if not loss.requires_grad:
        if not retain_tape:
            tape.clear()
        return
    if len(tape) == 0:
        raise RuntimeError("backward: tape is empty")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
        out = node.output
        out._grad = g if out._grad is None else out._grad + g
    # leaves (parameters) keep what is left
    leaf_ids = grads.keys()
    if leaf_ids:
        for node in tape.nodes:
            for t in node.inputs:
                g = grads.pop(id(t), None)
                if g is not None and t.requires_grad:
                    t._grad = g.copy() if t._grad is None else t._grad + g
    if not retain_tape:
        tape.clear()


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; ``b`` may be a 1-D row added to every row of a 2-D ``a``."""
    _check_finite("add", (a.values, b.values))
    if a.shape == b.shape:
        return _emit("add", (a, b), a.values + b.values, lambda g: (g, g))
    if a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        return _emit("add", (a, b), a.values + b.values, lambda g: (g, g.sum(axis=0)))
    raise _shape_error("add", a.shape, b.shape)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_finite("subtract", (a.values, b.values))
    if a.shape != b.shape:
        raise _shape_error("subtract", a.shape, b.shape)
    return _emit("subtract", (a, b), a.values - b.values, lambda g: (g, -g))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_finite("multiply", (a.values, b.values))
    if a.shape != b.shape:
        raise _shape_error("multiply", a.shape, b.shape)
    av, bv = a.values, b.values
    return _emit("multiply", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    _check_finite("scale", (a.values,))
    c = float(c)
    return _emit("scale", (a,), a.values * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    _check_finite("relu", (a.values,))
    mask = a.values > 0
    return _emit("relu", (a,), np.where(mask, a.values, 0.0).astype(a.values.dtype), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    _check_finite("exp", (a.values,))
    out = np.exp(a.values)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    _check_finite("log", (a.values,))
    av = a.values
    if _STRICT and np.any(av <= 0):
        raise NumericError("log: non-positive input")
    return _emit("log", (a,), np.log(av), lambda g: (g / av,))


def sigmoid(a: Tensor) -> Tensor:
    _check_finite("sigmoid", (a.values,))
    out = _stable_sigmoid(a.values)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(n, k) @ (k, m); a 1-D left operand is treated as a single row."""
    _check_finite("matmul", (a.values, b.values))
    av, bv = a.values, b.values
    if bv.ndim != 2 or av.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = av @ bv

    def grad_fn(g):
        if av.ndim == 1:
            return g @ bv.T, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _emit("matmul", (a, b), out, grad_fn)


def row_gather(a: Tensor, index) -> Tensor:
    """Rows ``a[index]``; indices may repeat."""
    index = np.asarray(index, dtype=np.int64)
    if a.values.ndim not in (1, 2):
        raise ShapeError(f"row_gather: expected 1-D or 2-D input, got {a.shape}")
    if index.ndim != 1:
        raise ShapeError(f"row_gather: index must be 1-D, got shape {index.shape}")
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError(f"row_gather: index out of range for {n} rows")
    _check_finite("row_gather", (a.values,))

    def grad_fn(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        return (full,)

    return _emit("row_gather", (a,), a.values[index], grad_fn)


def row_scatter_add(a: Tensor, index, num_rows: int) -> Tensor:
    """out[index[i]] += a[i] into ``num_rows`` zero rows."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or index.shape[0] != a.shape[0]:
        raise _shape_error("row_scatter_add", a.shape, index.shape)
    if index.size and (index.min() < 0 or index.max() >= num_rows):
        raise ShapeError(f"row_scatter_add: index out of range for {num_rows} rows")
    _check_finite("row_scatter_add", (a.values,))
    out = np.zeros((num_rows,) + a.shape[1:], dtype=a.values.dtype)
    np.add.at(out, index, a.values)
    return _emit("row_scatter_add", (a,), out, lambda g: (g[index],))


def segment_mean(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Mean of the rows of ``a`` sharing each segment id; empty segments give zeros."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if a.values.ndim != 2 or segment_ids.shape != (a.shape[0],):
        raise _shape_error("segment_mean", a.shape, segment_ids.shape)
    _check_finite("segment_mean", (a.values,))
    counts = np.bincount(segment_ids, minlength=num_segments).astype(a.values.dtype)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    out = np.zeros((num_segments, a.shape[1]), dtype=a.values.dtype)
    np.add.at(out, segment_ids, a.values)
    out *= inv[:, None]
    return _emit("segment_mean", (a,), out, lambda g: ((g * inv[:, None])[segment_ids],))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_rows: empty input")
    tail = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != tail:
            raise _shape_error("concat_rows", tensors[0].shape, t.shape)
    _check_finite("concat_rows", (t.values for t in tensors))
    sizes = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _emit("concat_rows", tuple(tensors), np.concatenate([t.values for t in tensors], axis=0), grad_fn)


# ---------------------------------------------------------------- reductions


def sum_rows(a: Tensor) -> Tensor:
    """Column sums of a 2-D tensor, shape (d,)."""
    if a.values.ndim != 2:
        raise ShapeError(f"sum_rows: expected 2-D input, got {a.shape}")
    _check_finite("sum_rows", (a.values,))
    n = a.shape[0]
    return _emit("sum_rows", (a,), a.values.sum(axis=0), lambda g: (np.broadcast_to(g, (n,) + g.shape).copy(),))


def mean_rows(a: Tensor) -> Tensor:
    """Column means of a 2-D tensor, shape (d,)."""
    if a.values.ndim != 2 or a.shape[0] == 0:
        raise ShapeError(f"mean_rows: expected non-empty 2-D input, got {a.shape}")
    _check_finite("mean_rows", (a.values,))
    n = a.shape[0]
    return _emit("mean_rows", (a,), a.values.mean(axis=0), lambda g: (np.broadcast_to(g / n, (n,) + g.shape).copy(),))


def total(a: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    _check_finite("sum", (a.values,))
    shape = a.shape
    return _emit("sum", (a,), np.asarray(a.values.sum()), lambda g: (np.full(shape, g, dtype=a.values.dtype),))


def mean(a: Tensor) -> Tensor:
    _check_finite("mean", (a.values,))
    shape, n = a.shape, a.values.size
    if n == 0:
        raise ShapeError("mean: empty input")
    return _emit("mean", (a,), np.asarray(a.values.mean()), lambda g: (np.full(shape, g / n, dtype=a.values.dtype),))


def l2_norm_rows(a: Tensor) -> Tensor:
    """Per-row Euclidean norm, shape (n,).  Gradient at a zero row is zero."""
    if a.values.ndim != 2:
        raise ShapeError(f"l2_norm_rows: expected 2-D input, got {a.shape}")
    _check_finite("l2_norm_rows", (a.values,))
    norms = np.sqrt((a.values ** 2).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)

    def grad_fn(g):
        return ((g / safe)[:, None] * a.values * (norms > 0)[:, None],)

    return _emit("l2_norm_rows", (a,), norms, grad_fn)


def dot_rows(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner products of two same-shape 2-D tensors, shape (n,)."""
    if a.shape != b.shape or a.values.ndim != 2:
        raise _shape_error("dot_rows", a.shape, b.shape)
    _check_finite("dot_rows", (a.values, b.values))
    av, bv = a.values, b.values
    return _emit("dot_rows", (a, b), (av * bv).sum(axis=1), lambda g: (g[:, None] * bv, g[:, None] * av))


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis of a 1-D or 2-D tensor."""
    if a.values.ndim not in (1, 2):
        raise ShapeError(f"softmax: expected 1-D or 2-D input, got {a.shape}")
    _check_finite("softmax", (a.values,))
    z = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), out, grad_fn)


# ---------------------------------------------------------------- similarity


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two (n, d) tensors, shape (n,).

    Norms below ``EPS_NORM`` are clamped to it; each clamp is counted in
    ``diagnostics["cosine_clamped"]``.
    """
    if a.shape != b.shape or a.values.ndim != 2:
        raise _shape_error("cosine_rows", a.shape, b.shape)
    _check_finite("cosine_rows", (a.values, b.values))
    av, bv = a.values, b.values
    na = np.sqrt((av * av).sum(axis=1))
    nb = np.sqrt((bv * bv).sum(axis=1))
    clamp_a = na < EPS_NORM
    clamp_b = nb < EPS_NORM
    n_clamped = int(clamp_a.sum() + clamp_b.sum())
    if n_clamped:
        diagnostics["cosine_clamped"] += n_clamped
    na_c = np.where(clamp_a, EPS_NORM, na)
    nb_c = np.where(clamp_b, EPS_NORM, nb)
    dots = (av * bv).sum(axis=1)
    # sqrt of the product of squared norms is exact for a == b, so cos(a, a) == 1
    with np.errstate(under="ignore", over="ignore"):
        joint = np.sqrt((av * av).sum(axis=1) * (bv * bv).sum(axis=1))
    plain = ~(clamp_a | clamp_b) & (joint > 0) & np.isfinite(joint)
    out = np.clip(dots / np.where(plain, joint, na_c * nb_c), -1.0, 1.0)

    def grad_fn(g):
        # clamped norms are constants
        ua = av / na_c[:, None]
        ub = bv / nb_c[:, None]
        ga = ub / na_c[:, None] - np.where(clamp_a, 0.0, out)[:, None] * ua / na_c[:, None]
        gb = ua / nb_c[:, None] - np.where(clamp_b, 0.0, out)[:, None] * ub / nb_c[:, None]
        return g[:, None] * ga, g[:, None] * gb

    return _emit("cosine_rows", (a, b), out, grad_fn)


def cosine_similarity(x: Tensor, y: Tensor) -> Tensor:
    """Cosine similarity of two equal-length vectors, as a scalar tensor."""
    if x.values.ndim != 1 or x.shape != y.shape or x.shape[0] == 0:
        raise _shape_error("cosine_similarity", x.shape, y.shape)
    return total(cosine_rows(reshape_row(x), reshape_row(y)))


def reshape_row(x: Tensor) -> Tensor:
    """View a length-d vector as a (1, d) matrix."""
    if x.values.ndim != 1:
        raise ShapeError(f"reshape_row: expected 1-D input, got {x.shape}")
    return _emit("reshape_row", (x,), x.values[None, :], lambda g: (g[0],))


def take_row(a: Tensor, i: int) -> Tensor:
    """Row ``i`` of a 2-D tensor as a 1-D vector."""
    if a.values.ndim != 2:
        raise ShapeError(f"take_row: expected 2-D input, got {a.shape}")
    i = int(i)
    if not 0 <= i < a.shape[0]:
        raise ShapeError(f"take_row: row {i} out of range for {a.shape[0]} rows")

    def grad_fn(g):
        full = np.zeros_like(a.values)
        full[i] = g
        return (full,)

    return _emit("take_row", (a,), a.values[i].copy(), grad_fn)


def pick(a: Tensor, index) -> Tensor:
    """Entries ``a[index]`` of a 1-D tensor."""
    if a.values.ndim != 1:
        raise ShapeError(f"pick: expected 1-D input, got {a.shape}")
    return row_gather(a, index)


# ---------------------------------------------------------------- losses


def bce_with_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted mean binary cross-entropy; entries with weight 0 are ignored.

    ``targets`` and ``weights`` are constants with the shape of ``logits``.
    """
    targets = np.asarray(targets, dtype=logits.values.dtype)
    weights = np.asarray(weights, dtype=logits.values.dtype)
    if targets.shape != logits.shape or weights.shape != logits.shape:
        raise _shape_error("bce_with_logits", logits.shape, targets.shape)
    _check_finite("bce_with_logits", (logits.values,))
    x = logits.values
    denom = max(float(weights.sum()), 1.0)
    per = np.maximum(x, 0) - x * np.nan_to_num(targets) + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray((per * weights).sum() / denom)
    p = _stable_sigmoid(x)
    return _emit("bce_with_logits", (logits,), out, lambda g: (g * (p - np.nan_to_num(targets)) * weights / denom,))
