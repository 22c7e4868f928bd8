"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in C-contiguous numpy arrays (row-major flat storage plus shape
metadata). Every differentiable primitive records a node on the active
:class:`Tape`; :func:`backward` replays the tape in exact reverse recording
order and accumulates gradients into ``requires_grad`` leaves. There is no
general broadcasting -- the only shape mixing allowed is adding a bias vector
to the rows of a matrix -- which keeps every backward rule a few lines of
auditable numpy.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError, ValidationError

PROB_CLAMP = 1e-7  # probabilities are clipped to [PROB_CLAMP, 1 - PROB_CLAMP] before logs


class OpStats:
    """Running counters used by the serving-cost probe.

    ``calls`` counts primitive invocations; ``work`` accumulates an element-count
    cost proxy (output size, or m*n*p for matmul).
    """

    __slots__ = ("calls", "work")

    def __init__(self):
        self.calls = 0
        self.work = 0

    def snapshot(self) -> tuple[int, int]:
        return self.calls, self.work


op_stats = OpStats()


def reset_op_stats() -> None:
    op_stats.calls = 0
    op_stats.work = 0


class Tensor:
    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @classmethod
    def _make(cls, values: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal fast path: trusts `values` to already be a float64 ndarray.
        t = cls.__new__(cls)
        t.values = values
        t.grad = None
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all real work happens in the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One recorded operation: inputs, output, and a local backward rule.

    ``rule(out_grad)`` returns one gradient array per input (``None`` where the
    input does not require a gradient).
    """

    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, rule: Callable):
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered record of operations for one forward pass.

    Nodes are appended in execution order, so the list is topologically sorted
    by construction; backward replays it reversed.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Tape] = []


def _record(inputs: tuple[Tensor, ...], output: Tensor, rule: Callable) -> None:
    if _TAPE_STACK and output.requires_grad:
        _TAPE_STACK[-1].nodes.append(Node(inputs, output, rule))


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(output: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``output``.

    Gradients accumulate: a tensor feeding multiple nodes receives the sum of
    all path contributions.
    """
    if output.size != 1:
        raise ContractError(f"backward requires a scalar output, got shape {output.shape}")
    output.grad = np.ones_like(output.values)
    for node in reversed(tape.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.rule(out_grad)
        for tensor, g in zip(node.inputs, grads):
            if g is None or not tensor.requires_grad:
                continue
            # Rules never mutate gradient arrays in place, so aliasing is safe.
            if tensor.grad is None:
                tensor.grad = g
            else:
                tensor.grad = tensor.grad + g


def _count(out: np.ndarray, extra_work: int | None = None) -> None:
    op_stats.calls += 1
    op_stats.work += out.size if extra_work is None else extra_work


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out_vals = a.values + b.values
    _count(out_vals)
    out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
    _record((a, b), out, lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")
    out_vals = a.values - b.values
    _count(out_vals)
    out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
    _record((a, b), out, lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out_vals = a.values * b.values
    _count(out_vals)
    out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
    av, bv = a.values, b.values
    _record((a, b), out, lambda g: (g * bv, g * av))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out_vals = a.values * c
    _count(out_vals)
    out = Tensor._make(out_vals, a.requires_grad)
    _record((a,), out, lambda g: (g * c,))
    return out


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of an m-by-n matrix.

    The single permitted broadcast; everything else must match shapes exactly.
    """
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_row_bias expects (m,n) and (n,), got {x.shape} and {b.shape}")
    out_vals = x.values + b.values
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad or b.requires_grad)
    _record((x, b), out, lambda g: (g, g.sum(axis=0)))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (m,n)@(n,p), (n,)@(n,p) and (m,n)@(n,).

    Vector operands behave like numpy: a 1-D left operand is a row, a 1-D
    right operand is a column, and the vector axis is dropped from the result.
    """
    av, bv = a.values, b.values
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        out_vals = av @ bv
        _count(out_vals, av.shape[0] * av.shape[1] * bv.shape[1])
        out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
        _record((a, b), out, lambda g: (g @ bv.T, av.T @ g))
        return out
    if av.ndim == 1 and bv.ndim == 2:
        if av.shape[0] != bv.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        out_vals = av @ bv
        _count(out_vals, av.shape[0] * bv.shape[1])
        out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
        _record((a, b), out, lambda g: (bv @ g, np.outer(av, g)))
        return out
    if av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        out_vals = av @ bv
        _count(out_vals, av.shape[0] * av.shape[1])
        out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
        _record((a, b), out, lambda g: (np.outer(g, bv), av.T @ g))
        return out
    raise ShapeError(f"matmul supports 2D/1D operands only, got {a.shape} x {b.shape}")


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two equal-length vectors, returned with shape (1,)."""
    if a.values.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot expects equal-length vectors, got {a.shape} and {b.shape}")
    out_vals = np.array([a.values @ b.values])
    _count(out_vals, a.size)
    out = Tensor._make(out_vals, a.requires_grad or b.requires_grad)
    av, bv = a.values, b.values
    _record((a, b), out, lambda g: (g[0] * bv, g[0] * av))
    return out


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    out_vals = np.ascontiguousarray(a.values.T)
    _count(out_vals)
    out = Tensor._make(out_vals, a.requires_grad)
    _record((a,), out, lambda g: (g.T,))
    return out


def sum_all(a: Tensor) -> Tensor:
    out_vals = np.array(a.values.sum())
    _count(out_vals, a.size)
    out = Tensor._make(out_vals, a.requires_grad)
    shape = a.shape
    _record((a,), out, lambda g: (np.full(shape, float(g)),))
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Arithmetic mean over the rows of an (m,n) matrix, yielding a vector."""
    if x.values.ndim != 2:
        raise ShapeError(f"mean_rows expects a matrix, got {x.shape}")
    m = x.shape[0]
    out_vals = x.values.mean(axis=0)
    _count(out_vals, x.size)
    out = Tensor._make(out_vals, x.requires_grad)
    _record((x,), out, lambda g: (np.tile(g / m, (m, 1)),))
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    out_vals = np.concatenate([p.values for p in parts], axis=axis)
    _count(out_vals)
    out = Tensor._make(out_vals, any(p.requires_grad for p in parts))
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(sizes))
        )

    _record(tuple(parts), out, rule)
    return out


def take_row(x: Tensor, i: int) -> Tensor:
    """Extract row ``i`` of a matrix as a vector."""
    if x.values.ndim != 2:
        raise ShapeError(f"take_row expects a matrix, got {x.shape}")
    out_vals = x.values[i].copy()
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad)
    shape = x.shape

    def rule(g):
        gx = np.zeros(shape)
        gx[i] = g
        return (gx,)

    _record((x,), out, rule)
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"slice_rows expects a matrix, got {x.shape}")
    out_vals = x.values[start:stop].copy()
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad)
    shape = x.shape

    def rule(g):
        gx = np.zeros(shape)
        gx[start:stop] = g
        return (gx,)

    _record((x,), out, rule)
    return out


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Look up rows of an embedding table; backward scatter-adds into the table.

    Repeated ids accumulate: looking a row up twice deposits twice its
    upstream gradient.
    """
    if table.values.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix table, got {table.shape}")
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("gather_rows needs a non-empty 1D id list")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        bad = int(idx[(idx < 0) | (idx >= table.shape[0])][0])
        raise ValidationError(f"id {bad} out of range for table with {table.shape[0]} rows")
    out_vals = table.values[idx]
    _count(out_vals)
    out = Tensor._make(out_vals, table.requires_grad)
    shape = table.shape

    def rule(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        return (gt,)

    _record((table,), out, rule)
    return out


def relu(x: Tensor) -> Tensor:
    out_vals = np.maximum(x.values, 0.0)
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad)
    mask = x.values > 0
    _record((x,), out, lambda g: (g * mask,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out_vals = np.empty_like(v)
    pos = v >= 0
    out_vals[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_vals[~pos] = ev / (1.0 + ev)
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad)
    _record((x,), out, lambda g: (g * out_vals * (1.0 - out_vals),))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Exponential normalisation along ``axis`` with max subtraction.

    Every slice along the chosen axis sums to one.
    """
    if axis >= x.values.ndim or axis < -x.values.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_vals = e / e.sum(axis=axis, keepdims=True)
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad)

    def rule(g):
        gs = (g * out_vals).sum(axis=axis, keepdims=True)
        return (out_vals * (g - gs),)

    _record((x,), out, rule)
    return out


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-row normalisation of an (m,n) matrix with learned gain and shift."""
    if x.values.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm shapes: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.values.mean(axis=1, keepdims=True)
    var = x.values.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.values - mu) * inv
    out_vals = xhat * gamma.values + beta.values
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad or gamma.requires_grad or beta.requires_grad)
    gv = gamma.values

    def rule(g):
        gy = g * gv
        m1 = gy.mean(axis=1, keepdims=True)
        m2 = (gy * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gy - m1 - xhat * m2)
        return (gx, (g * xhat).sum(axis=0), g.sum(axis=0))

    _record((x, gamma, beta), out, rule)
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale the rest by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must be in [0,1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out_vals = x.values * mask
    _count(out_vals)
    out = Tensor._make(out_vals, x.requires_grad)
    _record((x,), out, lambda g: (g * mask,))
    return out


def bce_loss(y_hat: Tensor, y: Tensor) -> Tensor:
    """Accumulated binary cross entropy, summed (not averaged) over the batch.

    Predictions are clamped to [1e-7, 1-1e-7] before the logs; the gradient is
    zero in the clamped region, matching the clip.
    """
    if y_hat.shape != y.shape or y_hat.values.ndim != 1:
        raise ShapeError(f"bce_loss expects equal-length vectors, got {y_hat.shape} and {y.shape}")
    labels = y.values
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValidationError("bce_loss labels must be 0 or 1")
    p = np.clip(y_hat.values, PROB_CLAMP, 1.0 - PROB_CLAMP)
    out_vals = np.array(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)).sum())
    _count(out_vals, y_hat.size)
    out = Tensor._make(out_vals, y_hat.requires_grad)
    inside = (y_hat.values > PROB_CLAMP) & (y_hat.values < 1.0 - PROB_CLAMP)

    def rule(g):
        gp = -(labels / p - (1.0 - labels) / (1.0 - p)) * inside
        return (float(g) * gp, None)

    _record((y_hat, y), out, rule)
    return out
