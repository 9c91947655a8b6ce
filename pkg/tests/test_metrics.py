import itertools
import json

import numpy as np
import pytest

from dtaprompt.autograd import Tensor, grad_check
from dtaprompt.errors import ContractError, UndefinedMetricError
from dtaprompt.metrics import (
    EvalReport,
    concordance_index,
    evaluate_predictions,
    mse_loss,
    pearson,
    prompt_loss,
    r2m,
    total_loss,
)


# -- independent oracles --------------------------------------------------


def ci_brute(y, f):
    num = z = 0.0
    for i, j in itertools.permutations(range(len(y)), 2):
        if y[i] > y[j]:
            z += 1
            num += 1.0 if f[i] > f[j] else 0.5 if f[i] == f[j] else 0.0
    return num / z


def pearson_oracle(y, f):
    n = len(y)
    my, mf = sum(y) / n, sum(f) / n
    cov = sum((a - my) * (b - mf) for a, b in zip(y, f)) / (n - 1)
    sy = (sum((a - my) ** 2 for a in y) / (n - 1)) ** 0.5
    sf = (sum((b - mf) ** 2 for b in f) / (n - 1)) ** 0.5
    return cov / (sy * sf)


def r2m_oracle(y, f):
    r2 = pearson_oracle(y, f) ** 2
    k = sum(a * b for a, b in zip(y, f)) / sum(b * b for b in f)
    my = sum(y) / len(y)
    r02 = 1 - sum((a - k * b) ** 2 for a, b in zip(y, f)) / sum((a - my) ** 2 for a in y)
    return r2 * (1 - abs(r2 - r02) ** 0.5)


def _tied_case(rng):
    n = int(rng.integers(2, 51))
    y = rng.integers(0, 6, n).astype(float)  # heavy label ties
    f = np.round(rng.normal(size=n), 1)  # prediction ties
    if np.all(y == y[0]):
        y[0] += 1
    return y, f


# -- losses ---------------------------------------------------------------


def test_mse_loss_examples():
    assert mse_loss(Tensor([[1.0], [2.0]]), [1, 4]).item() == 2.0
    assert mse_loss(Tensor([[3.0], [1.5]]), [3.0, 1.5]).item() == 0.0


def test_mse_loss_gradient():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(5, 1))
    x = Tensor(rng.normal(size=(5, 1)))
    assert grad_check(lambda t: mse_loss(t, y), x) < 1e-8
    from dtaprompt.autograd import Tape

    x.grad = None
    tape = Tape()
    with tape:
        loss = mse_loss(x, y)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * (x.data - y) / 5, rtol=1e-14)


def test_mse_loss_empty_batch():
    with pytest.raises(ContractError):
        mse_loss(Tensor(np.zeros((0, 1))), [])


def test_prompt_loss_examples():
    z = Tensor(np.zeros((1, 128)))
    assert prompt_loss(z, z, z).item() == 0.0
    e = np.zeros((1, 128))
    e[0, 0] = 1.0
    assert prompt_loss(Tensor(e), z, z).item() == pytest.approx(1 / 3, abs=1e-15)


def test_prompt_loss_quadratic_scaling():
    rng = np.random.default_rng(1)
    ps = [rng.normal(size=(3, 8)) for _ in range(3)]
    base = prompt_loss(*(Tensor(p) for p in ps)).item()
    assert prompt_loss(*(Tensor(2.5 * p) for p in ps)).item() == pytest.approx(6.25 * base, rel=1e-13)


def test_prompt_loss_is_batch_mean():
    rng = np.random.default_rng(2)
    ps = [rng.normal(size=(4, 8)) for _ in range(3)]
    expected = np.mean([(ps[0][i] @ ps[0][i] + ps[1][i] @ ps[1][i] + ps[2][i] @ ps[2][i]) / 3 for i in range(4)])
    assert prompt_loss(*(Tensor(p) for p in ps)).item() == pytest.approx(expected, rel=1e-13)


def test_total_loss_examples():
    a, b = Tensor(2.0), Tensor(1.0)
    assert total_loss(a, b, 0.0).item() == 2.0
    assert total_loss(a, b, 0.2).item() == pytest.approx(2.2, abs=1e-15)
    assert total_loss(a, Tensor(0.0), 0.2).item() == 2.0
    with pytest.raises(ContractError):
        total_loss(a, b, -0.1)


def test_total_loss_monotone():
    for lm, lp in [(0.0, 0.0), (1.0, 2.0), (3.5, 0.25)]:
        base = total_loss(Tensor(lm), Tensor(lp), 0.2).item()
        assert total_loss(Tensor(lm + 0.1), Tensor(lp), 0.2).item() >= base
        assert total_loss(Tensor(lm), Tensor(lp + 0.1), 0.2).item() >= base


# -- CI -------------------------------------------------------------------


def test_ci_examples():
    assert concordance_index([1, 2, 3], [1, 2, 3]) == 1.0
    assert concordance_index([1, 2, 3], [3, 1, 2]) == pytest.approx(1 / 3, abs=0)
    assert concordance_index([1, 2], [5, 5]) == 0.5


def test_ci_undefined():
    with pytest.raises(UndefinedMetricError):
        concordance_index([2, 2, 2], [1, 2, 3])
    with pytest.raises(UndefinedMetricError):
        concordance_index([1], [1])


@pytest.mark.parametrize("method", ["pairs", "fenwick"])
def test_ci_matches_brute_force_with_ties(method):
    rng = np.random.default_rng(123)
    for _ in range(100):
        y, f = _tied_case(rng)
        assert concordance_index(y, f, method=method) == ci_brute(y, f)


def test_ci_invariant_under_increasing_transform():
    rng = np.random.default_rng(5)
    for _ in range(100):
        y, f = _tied_case(rng)
        assert concordance_index(y, 2 * f + 1) == concordance_index(y, f)
        assert concordance_index(y, np.exp(f)) == concordance_index(y, f)


def test_ci_fast_path_large_n():
    rng = np.random.default_rng(6)
    y = rng.integers(0, 50, 3000).astype(float)
    f = np.round(rng.normal(size=3000), 2)
    assert concordance_index(y, f, "fenwick") == concordance_index(y, f, "pairs")


# -- Pearson / r2m ----------------------------------------------------------


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    x = np.random.default_rng(0).normal(size=10)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)


def test_pearson_oracle():
    rng = np.random.default_rng(7)
    y, f = rng.normal(size=100), rng.normal(size=100)
    assert abs(pearson(y, f) - pearson_oracle(list(y), list(f))) < 1e-12


def test_pearson_zero_variance():
    with pytest.raises(UndefinedMetricError):
        pearson([1, 1, 1], [1, 2, 3])


def test_r2m_examples():
    assert r2m([1.0, 2.0, 3.5], [1.0, 2.0, 3.5]) == pytest.approx(1.0, abs=1e-12)
    assert r2m([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)


def test_r2m_oracle_and_bound():
    rng = np.random.default_rng(8)
    for _ in range(20):
        y = rng.normal(6, 1, size=50)
        f = y + rng.normal(0, 0.7, size=50)
        v = r2m(y, f)
        assert abs(v - r2m_oracle(list(y), list(f))) < 1e-10
        assert v <= pearson(y, f) ** 2 + 1e-12


def test_r2m_all_zero_predictions():
    with pytest.raises(UndefinedMetricError):
        r2m([1, 2, 3], [0, 0, 0])


# -- report ---------------------------------------------------------------


def test_report_serialisation():
    rep = evaluate_predictions([1, 2, 3, 4], [1.1, 1.9, 3.2, 3.9], {"dp": True, "gcn": True, "trans": False})
    text = rep.to_text()
    kv = dict(line.split("=", 1) for line in text.strip().splitlines())
    assert set(kv) == {"mse", "ci", "r2m", "pearson", "n_samples", "dp", "gcn", "trans"}
    assert kv["trans"] == "False" and kv["n_samples"] == "4"
    rec = json.loads(rep.to_record())
    assert "\n" not in rep.to_record()
    assert rec["mse"] == rep.mse and rec["ci"] == 1.0


def test_report_invariants_checked():
    with pytest.raises(ContractError):
        EvalReport(mse=-1.0, ci=0.5, r2m=0.0, pearson=0.0, n_samples=2).check()
    with pytest.raises(ContractError):
        EvalReport(mse=1.0, ci=0.5, r2m=0.5, pearson=0.1, n_samples=2).check()
