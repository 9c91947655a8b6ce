"""Dense float64 reverse-mode autodiff.

Operations record themselves on the innermost active :class:`Tape`::

    tape = Tape()
    with tape:
        loss = reduce("sum", relu(matmul(x, w)))
    tape.backward(loss)

Outside a tape (or when no input requires a gradient) operations just
compute values, which is what inference uses.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DimensionError, DomainError, StructuralError, TrainingError

_ids = itertools.count(1)
_local = threading.local()


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class SparseMatrix:
    """Constant sparse matrix stored as (row, col, value) triples sorted by (row, col)."""

    def __init__(self, n_rows: int, n_cols: int, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if not (len(rows) == len(cols) == len(vals)):
            raise StructuralError("rows, cols and vals must have equal length")
        if len(rows):
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise StructuralError(f"sparse index out of range for shape ({n_rows}, {n_cols})")
            if not np.all(np.isfinite(vals)):
                raise StructuralError("sparse values must be finite")
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                k = int(np.argmax(dup))
                raise StructuralError(f"duplicate sparse entry ({rows[k]}, {cols[k]})")
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.rows, self.cols, self.vals = rows, cols, vals
        self._csr = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_rows, self.n_cols))
        self._csr_t = self._csr.T.tocsr()

    @classmethod
    def from_dense(cls, m) -> SparseMatrix:
        m = np.asarray(m, dtype=np.float64)
        r, c = np.nonzero(m)
        return cls(m.shape[0], m.shape[1], r, c, m[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.vals)]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.vals
        return out

    def dot(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr @ d)

    def rdot_t(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr_t @ g)


def block_diag(mats: Sequence[SparseMatrix]) -> SparseMatrix:
    """Stack sparse matrices along the diagonal (batches of disjoint graphs)."""
    rows, cols, vals = [], [], []
    r0 = c0 = 0
    for m in mats:
        rows.append(m.rows + r0)
        cols.append(m.cols + c0)
        vals.append(m.vals)
        r0 += m.n_rows
        c0 += m.n_cols
    if not mats:
        return SparseMatrix(0, 0, [], [], [])
    return SparseMatrix(r0, c0, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(t.node_id for t in self.inputs)


@dataclass
class Tape:
    """Append-only operation record. Enter it as a context manager to record."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> Tape:
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, op, inputs, output, backward) -> None:
        self.nodes.append(Node(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording inside a block."""

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        self._saved = list(stack)
        stack.clear()

    def __exit__(self, *exc):
        _local.stack[:] = self._saved


def _fresh(out: np.ndarray, requires_grad: bool) -> Tensor:
    # op outputs are new arrays already; skip the defensive copy in __init__
    if not (isinstance(out, np.ndarray) and out.dtype == np.float64):
        return Tensor(out, requires_grad=requires_grad)
    res = Tensor.__new__(Tensor)
    res.data, res.grad, res.requires_grad, res.node_id, res.name = out, None, requires_grad, next(_ids), None
    return res


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, bwd) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    res = _fresh(out, needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(op, inputs, res, bwd)
    return res


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every requires-grad leaf recorded on ``tape``.

    Gradients accumulate into existing buffers; leaves on the tape that the
    loss does not reach receive zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {n.output.node_id for n in tape.nodes}
    if loss.node_id not in produced and not loss.requires_grad:
        raise ContractError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad and t.node_id not in produced:
                leaves[t.node_id] = t
        g = grads.pop(node.output.node_id, None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            prev = grads.get(t.node_id)
            grads[t.node_id] = gi if prev is None else prev + gi
    if loss.node_id not in produced and loss.requires_grad:
        leaves[loss.node_id] = loss
    for nid, t in leaves.items():
        g = grads.get(nid)
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g.copy() if t.grad is None else t.grad + g


def recompute(fn: Callable[[], Tensor], params: Sequence[Tensor], op: str = "recompute") -> Tensor:
    """Evaluate ``fn()`` without keeping its intermediates on the tape.

    One node is recorded whose backward re-runs ``fn`` on a private tape and
    returns the gradients of ``params``, the tensors ``fn`` reads that need
    them. ``fn`` must be deterministic. Peak memory drops to one replay at a
    time, at the cost of a second forward pass.
    """
    params = tuple(params)
    if active_tape() is None or not any(t.requires_grad for t in params):
        return fn()
    with no_grad():
        out = fn().data

    def bwd(g):
        saved = [t.grad for t in params]
        for t in params:
            t.grad = None
        inner = Tape()
        try:
            with inner:
                probe = reduce("sum", mul(fn(), Tensor(g)))
            backward(probe, inner)
            return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in params]
        finally:
            for t, old in zip(params, saved):
                t.grad = old

    return _emit(op, params, out, bwd)


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data
    ga, gb = a.requires_grad, b.requires_grad
    return _emit("matmul", (a, b), A @ B, lambda g: (g @ B.T if ga else None, A.T @ g if gb else None))


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    d = _wrap(d)
    if d.data.ndim != 2 or s.n_cols != d.shape[0]:
        raise DimensionError(f"spmm shape mismatch: {s.shape} x {d.shape}")
    return _emit("spmm", (d,), s.dot(d.data), lambda g: (s.rdot_t(g),))


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", (a, b), A * B, lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "sigmoid": sigmoid}


def elementwise(kind: str, *args: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


def add_row_bias(t: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` (length n) to every row of ``t`` (m x n)."""
    t, b = _wrap(t), _wrap(b)
    if t.data.ndim != 2 or b.data.reshape(-1).shape[0] != t.shape[1]:
        raise DimensionError(f"row bias mismatch: {t.shape} + {b.shape}")
    bshape = b.shape
    return _emit(
        "add_row_bias",
        (t, b),
        t.data + b.data.reshape(1, -1),
        lambda g: (g, g.sum(axis=0).reshape(bshape)),
    )


def softmax_rows(t: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax with max subtraction.

    ``mask`` (bool, broadcastable to t) marks allowed columns; masked
    entries get exactly zero weight. A row with no allowed entry is an error.
    """
    t = _wrap(t)
    x = t.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ContractError("softmax row has every position masked")
        if mask.all():
            mask = None
        else:
            x = np.where(mask, x, -np.inf)
    # in place on one buffer: attention rows make these arrays large
    out = x - x.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    if mask is not None:
        out[~mask] = 0.0
    out /= out.sum(axis=-1, keepdims=True)

    def bwd(g):
        gi = g - np.einsum("...j,...j->...", g, out)[..., None]
        gi *= out
        return (gi,)

    return _emit("softmax_rows", (t,), out, bwd)


def reduce(kind: str, t: Tensor) -> Tensor:
    t = _wrap(t)
    if t.data.size == 0:
        raise DomainError(f"reduce {kind} over an empty tensor")
    x = t.data
    if kind == "sum":
        return _emit("sum", (t,), np.array(x.sum()), lambda g: (np.full_like(x, g),))
    if kind == "mean":
        n = x.size
        return _emit("mean", (t,), np.array(x.sum() / n), lambda g: (np.full_like(x, g / n),))
    if kind == "max_over_rows":
        return max_over_rows(t)
    raise ContractError(f"unknown reduce kind {kind!r}")


def max_over_rows(t: Tensor) -> Tensor:
    """Columnwise max of an (m x d) tensor; ties route gradient to the first row."""
    t = _wrap(t)
    x = t.data
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError(f"max_over_rows needs a non-empty matrix, got {x.shape}")
    idx = np.argmax(x, axis=0)
    cols = np.arange(x.shape[1])

    def bwd(g):
        out = np.zeros_like(x)
        out[idx, cols] = g
        return (out,)

    return _emit("max_over_rows", (t,), x[idx, cols], bwd)


def segment_max(t: Tensor, offsets: Sequence[int]) -> Tensor:
    """Columnwise max within consecutive row blocks.

    ``offsets`` has one more entry than there are blocks; block k spans rows
    offsets[k]:offsets[k+1]. Returns (n_blocks x d).
    """
    t = _wrap(t)
    x = t.data
    offsets = np.asarray(offsets, dtype=np.int64)
    starts = offsets[:-1]
    if np.any(np.diff(offsets) <= 0):
        raise DomainError("segment_max over an empty segment")
    cols = np.arange(x.shape[1])
    arg = np.empty((len(starts), x.shape[1]), dtype=np.int64)
    for k in range(len(starts)):
        arg[k] = starts[k] + np.argmax(x[offsets[k] : offsets[k + 1]], axis=0)
    out = x[arg, cols]

    def bwd(g):
        gx = np.zeros_like(x)
        np.add.at(gx, (arg, np.broadcast_to(cols, arg.shape)), g)
        return (gx,)

    return _emit("segment_max", (t,), out, bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ContractError("concat_cols needs at least one part")
    m = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != m:
            raise DimensionError(f"concat_cols row mismatch: {[q.shape for q in parts]}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def bwd(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return _emit("concat_cols", parts, np.concatenate([p.data for p in parts], axis=1), bwd)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ContractError("concat_rows needs at least one part")
    d = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != d:
            raise DimensionError(f"concat_rows column mismatch: {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bwd(g):
        return [g[bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return _emit("concat_rows", parts, np.concatenate([p.data for p in parts], axis=0), bwd)


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    t = _wrap(t)
    x = t.data

    def bwd(g):
        out = np.zeros_like(x)
        out[:, start:stop] = g
        return (out,)

    return _emit("slice_cols", (t,), x[:, start:stop].copy(), bwd)


def transpose(t: Tensor) -> Tensor:
    t = _wrap(t)
    return _emit("transpose", (t,), t.data.T.copy(), lambda g: (g.T,))


def gather_rows(t: Tensor, index: Sequence[int]) -> Tensor:
    """Rows ``t[index]``; repeated indices accumulate in backward."""
    t = _wrap(t)
    idx = np.asarray(index, dtype=np.int64)
    x = t.data

    def bwd(g):
        out = np.zeros_like(x)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("gather_rows", (t,), x[idx], bwd)


def layer_norm_rows(t: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    t, gamma, beta = _wrap(t), _wrap(gamma), _wrap(beta)
    x = t.data
    n = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gamma.data.reshape(1, -1)
    out = xhat * G + beta.data.reshape(1, -1)
    gshape, bshape = gamma.shape, beta.shape

    def bwd(g):
        dxhat = g * G
        dx = inv / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        return (dx, (g * xhat).sum(axis=0).reshape(gshape), g.sum(axis=0).reshape(bshape))

    return _emit("layer_norm_rows", (t, gamma, beta), out, bwd)


def dropout(t: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; ``rng=None`` or rate 0 is the identity (evaluation)."""
    t = _wrap(t)
    if rng is None or rate <= 0.0:
        return t
    keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", (t,), t.data * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# optimisation and verification


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int | None = None,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ContractError("adam step counter must be >= 1")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
        state.m[name] = m
        state.v[name] = v
    state.t = t
    return state


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; ``index`` restricts to some flat entries."""
    flat = x.data.reshape(-1)
    entries = range(flat.size) if index is None else index
    out = np.zeros(flat.size)
    with no_grad():
        for i in entries:
            old = flat[i]
            flat[i] = old + h
            fp = f(x).item()
            flat[i] = old - h
            fm = f(x).item()
            flat[i] = old
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, index=None) -> float:
    """Max over entries of |analytic - central difference| / max(1, |analytic|)."""
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    x.requires_grad = True
    x.grad = None
    tape = Tape()
    with tape:
        y = f(x)
    backward(y, tape)
    analytic = x.grad.reshape(-1)
    numeric = numeric_grad(f, x, h, index).reshape(-1)
    sel = np.arange(analytic.size) if index is None else np.asarray(list(index), dtype=np.int64)
    if sel.size == 0:
        return 0.0
    a, n = analytic[sel], numeric[sel]
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
