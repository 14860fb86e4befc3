"""Metric tests against independent brute-force oracles."""

import csv
import itertools

import numpy as np
import pytest

from d2nn.config import ModelConfig
from d2nn.errors import ContractError, DimensionError
from d2nn.metrics import (
    auc,
    div_at_k,
    ndcg_at_k,
    pairwise_dissimilarity,
    rmse,
    tradeoff,
    write_metrics_csv,
    EvalResult,
)


# -- oracles ---------------------------------------------------------------


def _auc_oracle(labels, scores):
    """All positive/negative pairs; ties count half."""
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _ndcg_oracle(labels, scores, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    dcg = sum(labels[i] / np.log2(rank + 2) for rank, i in enumerate(order))
    n_pos = sum(labels)
    if n_pos == 0:
        return 0.0
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(n_pos, len(order))))
    return dcg / idcg


def _div_oracle(feats, scores, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    if len(order) < 2:
        return None
    total = 0.0
    for a in range(len(order)):
        for b in range(a + 1, len(order)):
            x, y = feats[order[a]], feats[order[b]]
            nx, ny = np.linalg.norm(x), np.linalg.norm(y)
            total += 1.0 if nx == 0 or ny == 0 else 1.0 - x @ y / (nx * ny)
    m = len(order)
    return total * 2 / (m * (m - 1))


# -- exhaustive equivalence -------------------------------------------------


def test_auc_matches_oracle_on_all_short_lists():
    rng = np.random.default_rng(0)
    for n in range(2, 9):
        scores = rng.integers(0, 4, size=n).astype(float)  # many ties
        for labels in itertools.product([0, 1], repeat=n):
            if 0 < sum(labels) < n:
                assert auc(labels, scores) == pytest.approx(
                    _auc_oracle(labels, scores), abs=1e-12
                )


def test_ndcg_matches_oracle_on_all_short_lists():
    rng = np.random.default_rng(1)
    for n in range(1, 9):
        scores = rng.normal(size=n)
        for labels in itertools.product([0, 1], repeat=n):
            for k in (1, 3, 5, 8):
                assert ndcg_at_k(labels, scores, k) == pytest.approx(
                    _ndcg_oracle(labels, scores, k), abs=1e-12
                )


def test_div_matches_oracle():
    rng = np.random.default_rng(2)
    for n in range(1, 9):
        feats = rng.normal(size=(n, 4))
        if n > 2:
            feats[1] = 0.0  # zero vector counts as fully dissimilar
        scores = rng.normal(size=n)
        for k in (1, 2, 4, 8):
            got = div_at_k(feats, scores, k)
            want = _div_oracle(feats, scores, k)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)


def test_rmse_matches_oracle():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, size=50).astype(float)
    p = rng.random(50)
    assert rmse(y, p) == pytest.approx(np.sqrt(np.mean((y - p) ** 2)), abs=1e-12)


# -- edge cases ------------------------------------------------------------


def test_auc_rejects_single_class():
    with pytest.raises(ContractError):
        auc([1, 1], [0.5, 0.2])
    with pytest.raises(ContractError):
        auc([0, 0], [0.5, 0.2])


def test_auc_extremes():
    assert auc([1, 0], [0.9, 0.1]) == 1.0
    assert auc([1, 0], [0.1, 0.9]) == 0.0
    assert auc([1, 0], [0.5, 0.5]) == 0.5


def test_ndcg_edges():
    assert ndcg_at_k([1, 0, 0], [0.9, 0.5, 0.1], 3) == 1.0
    assert ndcg_at_k([0, 0, 0], [0.9, 0.5, 0.1], 3) == 0.0
    with pytest.raises(DimensionError):
        ndcg_at_k([1], [0.5], 0)
    with pytest.raises(DimensionError):
        ndcg_at_k([1, 0], [0.5], 3)


def test_pairwise_dissimilarity_bounds():
    a = np.array([1.0, 0.0])
    assert pairwise_dissimilarity(a, a) == pytest.approx(0.0)
    assert pairwise_dissimilarity(a, -a) == pytest.approx(2.0)
    assert pairwise_dissimilarity(a, np.zeros(2)) == 1.0


def test_div_requires_two_items():
    feats = np.ones((1, 3))
    assert div_at_k(feats, [0.5], 5) is None


def test_tradeoff_harmonic_mean():
    assert tradeoff(0.0, 0.0) == 0.0
    assert tradeoff(0.4, 0.4) == pytest.approx(0.4)
    assert tradeoff(0.331, 0.4815) == pytest.approx(2 * 0.331 * 0.4815 / (0.331 + 0.4815))


# -- CSV output ------------------------------------------------------------


def test_metrics_csv_layout(tmp_path):
    result = EvalResult(
        rmse=0.5,
        auc=0.9,
        ndcg={5: 0.1, 10: 0.2, 20: 0.3, 50: 0.4},
        div={5: 0.5, 10: 0.6, 20: 0.7, 50: 0.8},
        mean_ndcg=0.25,
        mean_div=0.65,
        tradeoff=tradeoff(0.25, 0.65),
    )
    path = tmp_path / "metrics.csv"
    write_metrics_csv(result, str(path))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["metric", "k", "value"]
    assert len(rows) == 14  # header + 13 fixed rows
    assert [r[0] for r in rows[1:]] == (
        ["rmse", "auc"] + ["ndcg"] * 4 + ["div"] * 4 + ["mean_ndcg", "mean_div", "tradeoff"]
    )
    assert rows[3][:2] == ["ndcg", "5"]
    assert float(rows[-1][2]) == pytest.approx(result.tradeoff)
