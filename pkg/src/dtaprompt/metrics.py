"""Training losses and regression metrics (MSE, CI, r2m, Pearson)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Tensor, add, mul, reduce, scale, sub
from .errors import ContractError, UndefinedMetricError


def mse_loss(preds: Tensor, labels) -> Tensor:
    y = np.asarray(labels, dtype=np.float64).reshape(preds.shape)
    if preds.size == 0:
        raise ContractError("mse_loss on an empty batch")
    d = sub(preds, Tensor(y))
    return reduce("mean", mul(d, d))


def prompt_loss(p_d: Tensor, p_t: Tensor, p_aff: Tensor) -> Tensor:
    """Mean over the batch of (|p_d|^2 + |p_t|^2 + |p_aff|^2) / 3."""
    n = p_d.shape[0]
    total = add(add(reduce("sum", mul(p_d, p_d)), reduce("sum", mul(p_t, p_t))), reduce("sum", mul(p_aff, p_aff)))
    return scale(total, 1.0 / (3.0 * n))


def total_loss(l_mse: Tensor, l_prompt: Tensor, alpha: float) -> Tensor:
    if alpha < 0:
        raise ContractError("alpha must be non-negative")
    return add(l_mse, scale(l_prompt, alpha))


def _pair(labels, preds):
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    f = np.asarray(preds, dtype=np.float64).reshape(-1)
    if y.shape != f.shape:
        raise ContractError(f"labels and predictions differ in length: {y.size} vs {f.size}")
    return y, f


def mse(labels, preds) -> float:
    y, f = _pair(labels, preds)
    if y.size == 0:
        raise UndefinedMetricError("MSE of an empty set")
    return float(np.mean((y - f) ** 2))


class _Fenwick:
    def __init__(self, n):
        self.tree = [0] * (n + 1)

    def add(self, i, v=1):
        i += 1
        while i < len(self.tree):
            self.tree[i] += v
            i += i & -i

    def prefix(self, i):
        """Sum over positions [0, i)."""
        s = 0
        while i > 0:
            s += self.tree[i]
            i -= i & -i
        return s


def concordance_index(labels, preds, method: str = "auto") -> float:
    """Fraction of pairs with y_i > y_j ranked correctly; prediction ties count 1/2.

    ``method`` is ``"pairs"`` (O(n^2), vectorised), ``"fenwick"`` (O(n log n))
    or ``"auto"``; both give identical results.
    """
    y, f = _pair(labels, preds)
    if y.size < 2:
        raise UndefinedMetricError("concordance index needs at least two samples")
    if method == "auto":
        method = "pairs" if y.size <= 2000 else "fenwick"
    if method == "pairs":
        gt = y[:, None] > y[None, :]
        z = int(gt.sum())
        if z == 0:
            raise UndefinedMetricError("concordance index undefined: all labels equal")
        df = f[:, None] - f[None, :]
        conc = int(np.count_nonzero(gt & (df > 0)))
        ties = int(np.count_nonzero(gt & (df == 0)))
    elif method == "fenwick":
        ranks = np.unique(f, return_inverse=True)[1].reshape(-1)
        order = np.argsort(y, kind="stable")
        bit_all = _Fenwick(int(ranks.max()) + 1)
        conc = ties = z = inserted = 0
        k = 0
        n = y.size
        while k < n:
            g = k
            while g < n and y[order[g]] == y[order[k]]:
                g += 1
            group = order[k:g]
            for i in group:
                r = int(ranks[i])
                below = bit_all.prefix(r)
                equal = bit_all.prefix(r + 1) - below
                conc += below
                ties += equal
                z += inserted
            for i in group:
                bit_all.add(int(ranks[i]))
            inserted += len(group)
            k = g
        if z == 0:
            raise UndefinedMetricError("concordance index undefined: all labels equal")
    else:
        raise ContractError(f"unknown CI method {method!r}")
    return (conc + 0.5 * ties) / z


def pearson(labels, preds) -> float:
    y, f = _pair(labels, preds)
    if y.size < 2:
        raise UndefinedMetricError("Pearson correlation needs at least two samples")
    yc, fc = y - y.mean(), f - f.mean()
    syy, sff = float(yc @ yc), float(fc @ fc)
    if syy == 0.0 or sff == 0.0:
        raise UndefinedMetricError("Pearson correlation undefined for zero variance")
    return float(np.clip((yc @ fc) / np.sqrt(syy * sff), -1.0, 1.0))


def r2m(labels, preds) -> float:
    """r^2 * (1 - sqrt|r^2 - r0^2|), r0^2 from the through-origin fit of labels on preds."""
    y, f = _pair(labels, preds)
    r = pearson(y, f)
    r2 = r * r
    ff = float(f @ f)
    if ff == 0.0:
        raise UndefinedMetricError("r2m undefined when all predictions are zero")
    k = float(y @ f) / ff
    yc = y - y.mean()
    res = y - k * f
    r02 = 1.0 - float(res @ res) / float(yc @ yc)
    return r2 * (1.0 - np.sqrt(abs(r2 - r02)))


@dataclass
class EvalReport:
    mse: float
    ci: float
    r2m: float
    pearson: float
    n_samples: int
    flags: dict = field(default_factory=dict)

    def check(self) -> None:
        if not 0.0 <= self.ci <= 1.0:
            raise ContractError(f"CI out of range: {self.ci}")
        if not -1.0 <= self.pearson <= 1.0:
            raise ContractError(f"Pearson out of range: {self.pearson}")
        if self.mse < 0:
            raise ContractError(f"negative MSE: {self.mse}")
        if self.r2m > self.pearson**2 + 1e-12:
            raise ContractError(f"r2m {self.r2m} exceeds r^2 {self.pearson ** 2}")

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self._flat().items()]
        return "\n".join(lines) + "\n"

    def to_record(self) -> str:
        return json.dumps(self._flat(), sort_keys=True)

    def _flat(self) -> dict:
        d = asdict(self)
        flags = d.pop("flags")
        d.update({k: v for k, v in flags.items()})
        return d


def evaluate_predictions(labels, preds, flags: dict | None = None) -> EvalReport:
    rep = EvalReport(
        mse=mse(labels, preds),
        ci=concordance_index(labels, preds),
        r2m=float(r2m(labels, preds)),
        pearson=pearson(labels, preds),
        n_samples=int(np.asarray(labels).size),
        flags=dict(flags or {}),
    )
    rep.check()
    return rep
