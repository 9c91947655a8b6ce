"""Finite-difference checks for every differentiable op and for the full model loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import SparseMatrix, Tape, Tensor, grad_check, no_grad

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _check(name, f, x, h=STEP) -> CheckRow:
    return CheckRow(name, grad_check(f, x, h), x.size)


def op_suite(seed: int = 42, h: float = STEP) -> list[CheckRow]:
    """One row per op; each loss is a random linear functional of the op output."""
    rng = np.random.default_rng(seed)

    def probe(t: Tensor) -> Tensor:
        w = np.random.default_rng(seed + 1).normal(size=t.shape)
        return ag.reduce("sum", ag.mul(t, Tensor(w)))

    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 3)))
    c = Tensor(rng.normal(size=(3, 4)))
    v = Tensor(rng.normal(size=4))
    nz = Tensor(_away_from_zero(rng, (3, 4)))
    dense = np.where(rng.random((4, 4)) < 0.4, rng.normal(size=(4, 4)), 0.0)
    s = SparseMatrix.from_dense(dense)
    d = Tensor(rng.normal(size=(4, 3)))
    distinct = Tensor(rng.permutation(16).reshape(4, 4) * 0.3)
    gamma = Tensor(rng.normal(size=4))
    beta = Tensor(rng.normal(size=4))
    drop_rng_seed = seed + 7
    w_rc = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

    rows = [
        _check("matmul[a]", lambda x: probe(ag.matmul(x, b)), a, h),
        _check("matmul[b]", lambda x: probe(ag.matmul(a, x)), b, h),
        _check("spmm", lambda x: probe(ag.spmm(s, x)), d, h),
        _check("add", lambda x: probe(ag.add(x, c)), a, h),
        _check("sub", lambda x: probe(ag.sub(c, x)), a, h),
        _check("mul", lambda x: probe(ag.mul(x, c)), a, h),
        _check("scale", lambda x: probe(ag.scale(x, -1.7)), a, h),
        _check("relu", lambda x: probe(ag.relu(x)), nz, h),
        _check("sigmoid", lambda x: probe(ag.sigmoid(x)), a, h),
        _check("add_row_bias[t]", lambda x: probe(ag.add_row_bias(x, v)), a, h),
        _check("add_row_bias[b]", lambda x: probe(ag.add_row_bias(a, x)), v, h),
        _check("softmax_rows", lambda x: probe(ag.softmax_rows(x)), a, h),
        _check(
            "softmax_rows[masked]",
            lambda x: probe(ag.softmax_rows(x, np.array([True, True, False, True]))),
            a,
            h,
        ),
        _check("sum", lambda x: ag.reduce("sum", x), a, h),
        _check("mean", lambda x: ag.reduce("mean", x), a, h),
        _check("max_over_rows", lambda x: probe(ag.max_over_rows(x)), distinct, h),
        _check("segment_max", lambda x: probe(ag.segment_max(x, [0, 1, 4])), distinct, h),
        _check("concat_cols", lambda x: probe(ag.concat_cols([x, c, x])), a, h),
        _check("concat_rows", lambda x: probe(ag.concat_rows([x, c])), a, h),
        _check("slice_cols", lambda x: probe(ag.slice_cols(x, 1, 3)), a, h),
        _check("transpose", lambda x: probe(ag.transpose(x)), a, h),
        _check("gather_rows", lambda x: probe(ag.gather_rows(x, [2, 0, 2])), a, h),
        _check("layer_norm[x]", lambda x: probe(ag.layer_norm_rows(x, gamma, beta)), a, h),
        _check("layer_norm[gamma]", lambda x: probe(ag.layer_norm_rows(a, x, beta)), gamma, h),
        _check("layer_norm[beta]", lambda x: probe(ag.layer_norm_rows(a, gamma, x)), beta, h),
        _check(
            "recompute",
            lambda x: probe(ag.recompute(lambda: ag.sigmoid(ag.matmul(ag.relu(ag.matmul(x, b)), w_rc)), [x, w_rc])),
            nz,
            h,
        ),
        _check(
            "dropout",
            lambda x: probe(ag.dropout(x, 0.3, np.random.default_rng(drop_rng_seed))),
            a,
            h,
        ),
    ]
    return rows


def model_loss_fn(trainer, batch, step: int = 0):
    """Total loss of ``trainer``'s model on ``batch`` with a fixed dropout mask."""
    from .training import dropout_rng

    def loss():
        return trainer.loss_terms(batch, dropout_rng(trainer.config.seed, step))[3]

    return loss


def model_gradcheck(trainer, batch, entries_per_param: int | None = None, seed: int = 0, h: float = STEP):
    """Compare backprop against central differences for model parameters.

    ``entries_per_param=None`` checks every entry; otherwise a seeded random
    subset plus the entry with the largest analytic gradient.
    """
    loss = model_loss_fn(trainer, batch)
    params = trainer.params
    for p in params.values():
        p.grad = None
    tape = Tape()
    with tape:
        value = loss()
    tape.backward(value)
    rng = np.random.default_rng(seed)
    rows = []
    for name, p in params.items():
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        n = p.size
        if entries_per_param is None or entries_per_param >= n:
            idx = np.arange(n)
        else:
            idx = np.unique(np.concatenate([rng.choice(n, entries_per_param, replace=False), [np.argmax(np.abs(analytic))]]))
        flat = p.data.reshape(-1)
        numeric = np.empty(len(idx))
        with no_grad():
            for k, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                fp = loss().item()
                flat[i] = old - h
                fm = loss().item()
                flat[i] = old
                numeric[k] = (fp - fm) / (2 * h)
        a = analytic[idx]
        err = float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.abs(a)))) if len(idx) else 0.0
        rows.append(CheckRow(name, err, len(idx)))
    return rows


def format_table(rows) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check'.ljust(width)}  {'entries':>7}  {'max_rel_err':>12}  result"]
    for r in rows:
        lines.append(f"{r.name.ljust(width)}  {r.n_entries:>7d}  {r.max_rel_err:12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
