"""Dense float64 tensors with tape-based reverse-mode differentiation.

Deliberately small: scalars, vectors and matrices, plus exactly the
operations an embedding model, a single-layer GRU and the ranking losses
need. Operations executed while a :class:`Tape` is active are recorded on
it; :func:`backward` replays the tape in exact reverse execution order and
accumulates vector-Jacobian products into per-tensor buffers keyed by
tensor identity.

Broadcasting is restricted to scalar-with-tensor and equal shapes. Row
bias addition and row reductions are explicit operations instead, so a
shape mismatch is always an error rather than a silent broadcast.

Gradients that reach an embedding table only through ``gather_rows`` are
kept as sparse row updates until a dense array is requested. A sampled
loss over K rows of an N-row table therefore costs O(K d), not O(N d),
in both time and memory.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "DomainError",
    "backward",
    "matmul",
    "matmul_t",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softplus",
    "add_bias",
    "sum_all",
    "sum_rows",
    "log_sum_exp",
    "log_sum_exp_rows",
    "gather_rows",
    "reshape",
    "elementwise",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An input value lies outside the operation's domain."""


class Tensor:
    """A dense float64 array plus gradient metadata.

    Tensors are treated as immutable once created; the optimizer mutates
    parameter data only between tape lifetimes. ``requires_grad`` marks
    leaves whose gradients the caller wants; it propagates to results.
    """

    __slots__ = ("data", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        # asarray keeps 0-d scalars 0-d; order="C" copies non-contiguous views.
        self.data = np.asarray(data, dtype=np.float64, order="C")
        if self.data.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {self.data.shape}")
        self.requires_grad = bool(requires_grad)
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Sugar over the module-level ops; keeps model code readable.
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


class _RowUpdate:
    """Sparse gradient contribution: rows ``rows`` added at ``ids``."""

    __slots__ = ("ids", "rows", "shape")

    def __init__(self, ids: np.ndarray, rows: np.ndarray, shape: tuple[int, ...]):
        self.ids = ids
        self.rows = rows
        self.shape = shape


class _RowAccum:
    """Accumulated sparse row updates for one tensor."""

    __slots__ = ("shape", "chunks")

    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape
        self.chunks: list[tuple[np.ndarray, np.ndarray]] = []

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        for ids, rows in self.chunks:
            np.add.at(out, ids, rows)
        return out


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of executed operations.

    One tape per training step (and per worker); nesting is an error.
    Entries are (output, inputs, vjp) triples appended in execution
    order; backward walks them strictly in reverse.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self._entries)


class Gradients:
    """Gradient buffers keyed by tensor identity.

    ``of`` returns a dense array (zeros for unreached tensors). Row
    updates accumulated through ``gather_rows`` stay sparse until either
    ``of`` or ``dense_into`` is called; ``sparse_rows`` exposes them.
    """

    def __init__(self, store: dict[int, np.ndarray | _RowAccum]):
        self._store = store

    def of(self, t: Tensor) -> np.ndarray:
        got = self._store.get(id(t))
        if got is None:
            return np.zeros(t.shape, dtype=np.float64)
        if isinstance(got, _RowAccum):
            got = got.dense()
            self._store[id(t)] = got
        return got

    def sparse_rows(self, t: Tensor) -> list[tuple[np.ndarray, np.ndarray]] | None:
        got = self._store.get(id(t))
        if isinstance(got, _RowAccum):
            return got.chunks
        return None

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._store

    def __len__(self) -> int:
        return len(self._store)


def backward(root: Tensor) -> Gradients:
    """Reverse-mode sweep from a scalar root.

    Seeds d(root)/d(root) = 1 and replays the root's tape in reverse
    execution order. Returns gradients for every reachable tensor with
    ``requires_grad``; a constant root yields an empty gradient set.
    """
    if root.size != 1:
        raise ShapeError(f"backward root must be a scalar, got shape {root.shape}")
    store: dict[int, np.ndarray | _RowAccum] = {}
    if root.requires_grad or root.tape is not None:
        store[id(root)] = np.ones(root.shape, dtype=np.float64)
    if root.tape is None:
        return Gradients(store if root.requires_grad else {})
    for out, inputs, vjp in reversed(root.tape._entries):
        got = store.get(id(out))
        if got is None:
            continue
        g = got.dense() if isinstance(got, _RowAccum) else got
        store[id(out)] = g
        for t, contrib in zip(inputs, vjp(g)):
            if contrib is None or not t.requires_grad:
                continue
            _accumulate(store, t, contrib)
    # Drop intermediates the caller cannot name anyway? No: keep everything;
    # buffers are as cheap as the forward values and useful for debugging.
    return Gradients(store)


def _accumulate(store, t: Tensor, contrib) -> None:
    cur = store.get(id(t))
    if isinstance(contrib, _RowUpdate):
        if cur is None:
            acc = _RowAccum(contrib.shape)
            acc.chunks.append((contrib.ids, contrib.rows))
            store[id(t)] = acc
        elif isinstance(cur, _RowAccum):
            cur.chunks.append((contrib.ids, contrib.rows))
        else:
            buf = cur.copy()
            np.add.at(buf, contrib.ids, contrib.rows)
            store[id(t)] = buf
    else:
        if cur is None:
            store[id(t)] = contrib
        elif isinstance(cur, _RowAccum):
            buf = cur.dense()
            buf += contrib
            store[id(t)] = buf
        else:
            store[id(t)] = cur + contrib


def _record(out_data, pairs: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Wrap ``out_data`` and record the op if a tape is active.

    ``pairs`` maps each differentiable input to a vjp closure taking the
    output gradient. Inputs that do not require grad are recorded but
    skipped at accumulation time.
    """
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t, _ in pairs)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        inputs = tuple(t for t, _ in pairs)
        vjps = tuple(fn for _, fn in pairs)

        def vjp(g, _vjps=vjps):
            return tuple(fn(g) for fn in _vjps)

        tape._entries.append((out, inputs, vjp))
        out.tape = tape
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast "
                     "(scalar-with-tensor and equal shapes only)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo scalar broadcasting: a scalar operand collects the full sum.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if np.prod(shape, dtype=int) == 1 else g


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _record(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose; b is [n x k]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul_t: incompatible shapes {a.shape} @ {b.shape}.T")
    out = a.data @ b.data.T
    return _record(out, [
        (a, lambda g: g @ b.data),
        (b, lambda g: g.T @ a.data),
    ])


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    return _record(a.data + b.data, [
        (a, lambda g: _reduce_to(g, a.shape)),
        (b, lambda g: _reduce_to(g, b.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    return _record(a.data - b.data, [
        (a, lambda g: _reduce_to(g, a.shape)),
        (b, lambda g: _reduce_to(-g, b.shape)),
    ])


def mul(a, b) -> Tensor:
    """Hadamard product (elementwise; scalar operands broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    return _record(a.data * b.data, [
        (a, lambda g: _reduce_to(g * b.data, a.shape)),
        (b, lambda g: _reduce_to(g * a.data, b.shape)),
    ])


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _record(a.data * c, [(a, lambda g: g * c)])


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record(out, [(a, lambda g: g * out * (1.0 - out))])


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, [(a, lambda g: g * (1.0 - out * out))])


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _record(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: inputs must be strictly positive")
    out = np.log(a.data)
    return _record(out, [(a, lambda g: g / a.data)])


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x) via the stable identity max(x, 0) + log1p(e^-|x|)."""
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def grad(g, x=x):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return g * s

    return _record(out, [(a, grad)])


# ---------------------------------------------------------------------------
# structure


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of a [B x d] matrix."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: got {x.shape} and {b.shape}")
    return _record(x.data + b.data[None, :], [
        (x, lambda g: g),
        (b, lambda g: g.sum(axis=0)),
    ])


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(np.sum(x.data))
    return _record(out, [(x, lambda g: np.broadcast_to(g, x.shape).astype(np.float64))])


def sum_rows(x: Tensor) -> Tensor:
    """Row sums of a [B x C] matrix, as a length-B vector."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"sum_rows: need a matrix, got {x.shape}")
    out = x.data.sum(axis=1)
    return _record(out, [(x, lambda g: np.repeat(g[:, None], x.shape[1], axis=1))])


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=int)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _record(x.data.reshape(shape), [(x, lambda g: g.reshape(x.shape))])


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows of a [N x d] table; duplicate ids allowed.

    Backward scatter-adds the output gradient back into the table, so a
    row gathered twice receives the sum of both row gradients. The update
    stays sparse until the caller asks for a dense array.
    """
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be a matrix, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"gather_rows: ids must be a vector, got shape {ids.shape}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"gather_rows: id out of range for table with {n} rows")
    out = table.data[ids]
    shape = table.shape
    return _record(out, [(table, lambda g: _RowUpdate(ids, g, shape))])


# ---------------------------------------------------------------------------
# log-sum-exp


def _lse_forward(x: np.ndarray, w: np.ndarray | None):
    # max taken over terms with positive weight; zero-weight terms drop out.
    if w is None:
        m = x.max(axis=-1, keepdims=True)
        t = np.exp(x - m)
    else:
        # Zero-weight terms are dropped before exponentiation: they may
        # exceed the masked max and would overflow exp otherwise.
        masked = np.where(w > 0.0, x, -np.inf)
        m = masked.max(axis=-1, keepdims=True)
        t = np.where(w > 0.0, w * np.exp(masked - m), 0.0)
    s = t.sum(axis=-1, keepdims=True)
    out = (m + np.log(s)).squeeze(-1)
    return out, t, s


def log_sum_exp(x: Tensor, weights=None) -> Tensor:
    """log sum_i w_i e^{x_i} over a vector, max-shifted for stability.

    Weights are fixed non-negative coefficients (not differentiated);
    at least one must be positive.
    """
    x = _as_tensor(x)
    if x.data.ndim != 1 or x.size == 0:
        raise ShapeError(f"log_sum_exp: need a non-empty vector, got shape {x.shape}")
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != x.shape:
            raise ShapeError(f"log_sum_exp: weights {w.shape} do not match {x.shape}")
        if np.any(w < 0.0) or not np.any(w > 0.0):
            raise DomainError("log_sum_exp: weights must be non-negative with at least one positive")
    out, t, s = _lse_forward(x.data[None, :], w if w is None else w[None, :])
    t, s = t[0], s[0]
    return _record(np.asarray(out[0]), [(x, lambda g: g * (t / s))])


def log_sum_exp_rows(x: Tensor, weights=None) -> Tensor:
    """Row-wise weighted log-sum-exp of a [B x C] matrix, length-B output.

    Weights may be a length-C vector or a constant [B x C] matrix (the
    per-row retention masks of the truncated losses); every row needs at
    least one positive weight.
    """
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"log_sum_exp_rows: need a [B x C] matrix with C > 0, got {x.shape}")
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim == 1:
            if w.shape[0] != x.shape[1]:
                raise ShapeError("log_sum_exp_rows: weight length does not match columns")
            w = np.broadcast_to(w, x.shape)
        elif w.shape != x.shape:
            raise ShapeError("log_sum_exp_rows: weight matrix shape mismatch")
        if np.any(w < 0.0) or not np.all((w > 0.0).any(axis=1)):
            raise DomainError("log_sum_exp_rows: each row needs non-negative weights, one positive")
    out, t, s = _lse_forward(x.data, w)
    return _record(out, [(x, lambda g: g[:, None] * (t / s))])


# ---------------------------------------------------------------------------
# dispatcher


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "hadamard": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "scale": scale,
    "softplus": softplus,
}


def elementwise(op: str, *args) -> Tensor:
    """Name-dispatched elementwise application (see _ELEMENTWISE)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"elementwise: unknown op {op!r}") from None
    return fn(*args)
