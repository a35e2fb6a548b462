"""Reverse-mode differentiable tensor engine.

All values are dense float64 numpy arrays (0-d scalars, vectors, matrices).
Operations executed while a :class:`Tape` is active record a backward rule;
:func:`backward` replays the rules in reverse and accumulates gradients into
``Tensor.grad``. Without an active tape every operation is a plain forward
computation, which makes read-only inference safe to run concurrently.

The tape is intentionally scoped to one training step: build it, run
``backward`` once, throw it away. Sparse-dense products go through scipy's
CSR kernels; adjacency weights never receive gradients.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy import sparse as _sparse

from .errors import DomainError, EngineUsageError, ShapeError

Array = np.ndarray

_TLS = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_TLS, "tape", None)


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C" keeps 0-d scalars 0-d (ascontiguousarray would not)
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all routed through the module-level ops so that
    # recording and shape checking live in one place.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """Create a trainable tensor."""
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of differentiable operations for one backward pass.

    Use as a context manager; only one tape may be active per thread. A tape
    is consumed by :func:`backward` and cannot be reused.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[Array], None]]] = []
        self._output_ids: set[int] = set()
        self._seen: list[Tensor] = []
        self._seen_ids: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise EngineUsageError("a tape is already active in this thread")
        if self._consumed:
            raise EngineUsageError("cannot re-enter a consumed tape")
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TLS.tape = None

    def watch(self, t: Tensor) -> None:
        """Ensure ``t`` gets a (possibly zero) gradient after backward."""
        if not t.requires_grad:
            raise EngineUsageError("watch() expects a tensor with requires_grad=True")
        self._track(t)

    def _track(self, t: Tensor) -> None:
        if id(t) not in self._seen_ids:
            self._seen_ids.add(id(t))
            self._seen.append(t)

    def _record(self, out: Tensor, rule: Callable[[Array], None]) -> None:
        if self._consumed:
            raise EngineUsageError("cannot record on a consumed tape")
        out.requires_grad = True
        self._records.append((out, rule))
        self._output_ids.add(id(out))


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _maybe_record(out: Tensor, inputs: Sequence[Tensor], rule: Callable[[Array], None]) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return out
    if not any(t.requires_grad for t in inputs):
        return out
    for t in inputs:
        if t.requires_grad:
            tape._track(t)
    tape._record(out, rule)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of everything reachable from a scalar loss.

    Gradients accumulate (a tensor feeding several consumers receives the sum
    of their contributions). Tensors tracked on the tape that turn out to be
    unreachable from the loss get a zero-filled gradient. The tape is consumed.
    """
    if tape._consumed:
        raise EngineUsageError("tape already consumed by a previous backward")
    if loss.data.shape != ():
        raise EngineUsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if id(loss) not in tape._output_ids:
        raise EngineUsageError("loss was not produced on this tape")
    loss.grad = np.ones((), dtype=np.float64)
    for out, rule in reversed(tape._records):
        if out.grad is None:
            continue
        rule(out.grad)
    for t in tape._seen:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
    tape._records.clear()
    tape._consumed = True


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise operations


def _as_operand(b):
    if isinstance(b, Tensor):
        return b
    if isinstance(b, (int, float, np.integer, np.floating)):
        return float(b)
    raise TypeError(f"expected Tensor or number, got {type(b).__name__}")


def _check_binary(name: str, a: Tensor, b: Tensor) -> bool:
    """Allow equal shapes or a scalar (0-d) second operand; return scalar flag."""
    if a.data.shape == b.data.shape:
        return False
    if b.data.shape == ():
        return True
    raise ShapeError(f"{name}: operands have shapes {a.data.shape} and {b.data.shape}")


def add(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        out = Tensor(a.data + b)

        def rule(g: Array) -> None:
            _accum(a, g)

        return _maybe_record(out, (a,), rule)
    scalar_b = _check_binary("add", a, b)
    out = Tensor(a.data + b.data)

    def rule(g: Array) -> None:
        _accum(a, g)
        _accum(b, np.asarray(g.sum()) if scalar_b else g)

    return _maybe_record(out, (a, b), rule)


def sub(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        out = Tensor(a.data - b)

        def rule(g: Array) -> None:
            _accum(a, g)

        return _maybe_record(out, (a,), rule)
    scalar_b = _check_binary("sub", a, b)
    out = Tensor(a.data - b.data)

    def rule(g: Array) -> None:
        _accum(a, g)
        _accum(b, np.asarray(-g.sum()) if scalar_b else -g)

    return _maybe_record(out, (a, b), rule)


def mul(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        return scale(a, b)
    scalar_b = _check_binary("mul", a, b)
    out = Tensor(a.data * b.data)

    def rule(g: Array) -> None:
        _accum(a, g * b.data)
        gb = g * a.data
        _accum(b, np.asarray(gb.sum()) if scalar_b else gb)

    return _maybe_record(out, (a, b), rule)


def div(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        if b == 0.0:
            raise DomainError("div: division by zero scalar")
        return scale(a, 1.0 / b)
    scalar_b = _check_binary("div", a, b)
    if np.any(b.data == 0.0):
        idx = tuple(int(v) for v in np.argwhere(np.atleast_1d(b.data) == 0.0)[0])
        raise DomainError(f"div: zero denominator at index {idx}", index=idx)
    out = Tensor(a.data / b.data)

    def rule(g: Array) -> None:
        _accum(a, g / b.data)
        gb = -g * a.data / (b.data * b.data)
        _accum(b, np.asarray(gb.sum()) if scalar_b else gb)

    return _maybe_record(out, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def rule(g: Array) -> None:
        _accum(a, g * c)

    return _maybe_record(out, (a,), rule)


def _sigmoid_values(x: Array) -> Array:
    # exp of a non-positive argument only, so no overflow for any finite x
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(_sigmoid_values(a.data))

    def rule(g: Array) -> None:
        _accum(a, g * out.data * (1.0 - out.data))

    return _maybe_record(out, (a,), rule)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        idx = tuple(int(v) for v in np.argwhere(np.atleast_1d(a.data) <= 0.0)[0])
        raise DomainError(f"log: non-positive input at index {idx}", index=idx)
    out = Tensor(np.log(a.data))

    def rule(g: Array) -> None:
        _accum(a, g / a.data)

    return _maybe_record(out, (a,), rule)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; negative input raises.

    Zero input is permitted in the forward pass but has an unbounded
    derivative, so differentiable call sites must floor their argument
    (the losses here use sqrt(x + 1e-12) throughout).
    """
    if np.any(a.data < 0.0):
        idx = tuple(int(v) for v in np.argwhere(np.atleast_1d(a.data) < 0.0)[0])
        raise DomainError(f"sqrt: negative input at index {idx}", index=idx)
    out = Tensor(np.sqrt(a.data))

    def rule(g: Array) -> None:
        with np.errstate(divide="ignore"):
            _accum(a, g * 0.5 / out.data)

    return _maybe_record(out, (a,), rule)


def softplus(a: Tensor) -> Tensor:
    """ln(1 + e^x), computed with the large-|x| branch to avoid overflow."""
    x = a.data
    out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))

    def rule(g: Array) -> None:
        _accum(a, g * _sigmoid_values(x))

    return _maybe_record(out, (a,), rule)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    x = a.data
    out = Tensor(np.where(x > 0.0, x, slope * x))

    def rule(g: Array) -> None:
        _accum(a, g * np.where(x > 0.0, 1.0, slope))

    return _maybe_record(out, (a,), rule)


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values into [lo, hi]; gradient passes only where unclipped."""
    if lo is None and hi is None:
        raise EngineUsageError("clamp needs at least one bound")
    out = Tensor(np.clip(a.data, lo, hi))
    mask = np.ones_like(a.data)
    if lo is not None:
        mask = mask * (a.data >= lo)
    if hi is not None:
        mask = mask * (a.data <= hi)

    def rule(g: Array) -> None:
        _accum(a, g * mask)

    return _maybe_record(out, (a,), rule)


_UNARY_KINDS = {"sigmoid": sigmoid, "log": log, "sqrt": sqrt, "softplus": softplus}
_BINARY_KINDS = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise op by name.

    ``add``/``sub``/``mul``/``div`` and ``scale`` take a second operand
    (identical shape, a scalar tensor, or a plain number); the rest are unary.
    """
    if kind in _UNARY_KINDS:
        if b is not None:
            raise EngineUsageError(f"elementwise '{kind}' is unary")
        return _UNARY_KINDS[kind](a)
    if kind in _BINARY_KINDS:
        if b is None:
            raise EngineUsageError(f"elementwise '{kind}' needs a second operand")
        return _BINARY_KINDS[kind](a, b)
    if kind == "scale":
        if not isinstance(b, (int, float, np.integer, np.floating)):
            raise EngineUsageError("elementwise 'scale' needs a numeric factor")
        return scale(a, float(b))
    raise EngineUsageError(f"unknown elementwise kind '{kind}'")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g: Array) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _maybe_record(out, (a, b), rule)


def matvec(w: Tensor, v: Tensor) -> Tensor:
    if w.data.ndim != 2 or v.data.ndim != 1 or w.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {w.data.shape} and {v.data.shape}")
    out = Tensor(w.data @ v.data)

    def rule(g: Array) -> None:
        _accum(w, np.outer(g, v.data))
        _accum(v, w.data.T @ g)

    return _maybe_record(out, (w, v), rule)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy())

    def rule(g: Array) -> None:
        _accum(a, g.T)

    return _maybe_record(out, (a,), rule)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    out = Tensor(a.data.reshape(shape).copy())

    def rule(g: Array) -> None:
        _accum(a, g.reshape(a.data.shape))

    return _maybe_record(out, (a,), rule)


def reduce(kind: str, x: Tensor, axis: int | None = None) -> Tensor:
    if kind not in ("sum", "mean"):
        raise EngineUsageError(f"unknown reduce kind '{kind}'")
    if axis is not None and not (0 <= axis < x.data.ndim):
        raise ShapeError(f"reduce: axis {axis} invalid for shape {x.data.shape}")
    count = x.data.size if axis is None else x.data.shape[axis]
    data = x.data.sum(axis=axis)
    if kind == "mean":
        data = data / count
    out = Tensor(data)
    factor = 1.0 / count if kind == "mean" else 1.0

    def rule(g: Array) -> None:
        gg = g * factor if kind == "mean" else g
        if axis is None:
            _accum(x, np.broadcast_to(gg, x.data.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(gg, axis), x.data.shape))

    return _maybe_record(out, (x,), rule)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    return reduce("sum", x, axis)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    return reduce("mean", x, axis)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a matrix; backward scatter-adds into the source."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected a 2-d tensor, got shape {x.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.data.shape[0]} rows")
    out = Tensor(x.data[idx])

    def rule(g: Array) -> None:
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, idx, g)

    return _maybe_record(out, (x,), rule)


def take_row(x: Tensor, index: int) -> Tensor:
    """One row of a matrix as a vector."""
    return reshape(gather_rows(x, [index]), (x.data.shape[1],))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the first axis (vectors or matrices)."""
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    nd = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != nd or p.data.shape[1:] != parts[0].data.shape[1:]:
            raise ShapeError("concat_rows: trailing dimensions disagree")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def rule(g: Array) -> None:
        for p, s, e in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[s:e])

    return _maybe_record(out, tuple(parts), rule)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices along the second axis."""
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != parts[0].data.shape[0]:
            raise ShapeError("concat_cols: row counts disagree")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def rule(g: Array) -> None:
        for p, s, e in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, s:e])

    return _maybe_record(out, tuple(parts), rule)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-c vector to every row of an (r, c) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != m.data.shape[1]:
        raise ShapeError(f"add_rowvec: incompatible shapes {m.data.shape} and {v.data.shape}")
    out = Tensor(m.data + v.data[None, :])

    def rule(g: Array) -> None:
        _accum(m, g)
        _accum(v, g.sum(axis=0))

    return _maybe_record(out, (m, v), rule)


def add_colvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-r vector down every column of an (r, c) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != m.data.shape[0]:
        raise ShapeError(f"add_colvec: incompatible shapes {m.data.shape} and {v.data.shape}")
    out = Tensor(m.data + v.data[:, None])

    def rule(g: Array) -> None:
        _accum(m, g)
        _accum(v, g.sum(axis=1))

    return _maybe_record(out, (m, v), rule)


# ---------------------------------------------------------------------------
# sparse


class SparseMatrix:
    """CSR matrix with constant (non-trainable) weights.

    Row offsets are non-decreasing with ``rows + 1`` entries starting at 0;
    column indices stay below ``cols``; weights are finite. Instances are
    immutable after construction and safe to share across threads.
    """

    __slots__ = ("rows", "cols", "row_offsets", "col_indices", "weights", "_csr", "_csr_t")

    def __init__(self, rows: int, cols: int, row_offsets, col_indices, weights):
        self.rows = int(rows)
        self.cols = int(cols)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        if self.rows < 0 or self.cols < 0:
            raise ShapeError("SparseMatrix: negative dimensions")
        if self.row_offsets.shape != (self.rows + 1,):
            raise ShapeError("SparseMatrix: row_offsets must have rows + 1 entries")
        if self.row_offsets[0] != 0 or np.any(np.diff(self.row_offsets) < 0):
            raise ShapeError("SparseMatrix: row_offsets must be non-decreasing from 0")
        if self.row_offsets[-1] != self.col_indices.shape[0]:
            raise ShapeError("SparseMatrix: last row offset must equal the entry count")
        if self.col_indices.shape != self.weights.shape:
            raise ShapeError("SparseMatrix: col_indices and weights lengths differ")
        if self.col_indices.size and (self.col_indices.min() < 0 or self.col_indices.max() >= self.cols):
            raise ShapeError("SparseMatrix: column index out of range")
        if not np.all(np.isfinite(self.weights)):
            raise DomainError("SparseMatrix: weights must be finite")
        self._csr = None
        self._csr_t = None

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def from_coo(cls, rows: int, cols: int, r, c, w) -> "SparseMatrix":
        r = np.asarray(r, dtype=np.int64)
        c = np.asarray(c, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        order = np.lexsort((c, r))
        counts = np.bincount(r, minlength=rows)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return cls(rows, cols, offsets, c[order], w[order])

    def to_dense(self) -> Array:
        dense = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            s, e = self.row_offsets[i], self.row_offsets[i + 1]
            for k in range(s, e):
                dense[i, self.col_indices[k]] += self.weights[k]
        return dense

    def _scipy(self):
        if self._csr is None:
            self._csr = _sparse.csr_matrix(
                (self.weights, self.col_indices, self.row_offsets), shape=(self.rows, self.cols)
            )
        return self._csr

    def _scipy_t(self):
        if self._csr_t is None:
            self._csr_t = self._scipy().T.tocsr()
        return self._csr_t


def spmm(a: SparseMatrix, x: Tensor) -> Tensor:
    """Sparse-dense product; gradient flows through the dense operand only."""
    if x.data.ndim != 2:
        raise ShapeError(f"spmm: expected a 2-d dense operand, got shape {x.data.shape}")
    if a.cols != x.data.shape[0]:
        raise ShapeError(f"spmm: dimensions disagree, ({a.rows}x{a.cols}) x {x.data.shape}")
    out = Tensor(a._scipy() @ x.data)

    def rule(g: Array) -> None:
        _accum(x, a._scipy_t() @ g)

    return _maybe_record(out, (x,), rule)
