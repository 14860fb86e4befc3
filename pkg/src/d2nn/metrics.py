"""Accuracy and diversity metrics plus the evaluation driver.

Accuracy: RMSE of predicted click probabilities, Mann-Whitney AUC with tie
handling, and binary NDCG@k. Diversity: DIV@k, the mean pairwise cosine
dissimilarity of the top-k recommended items. The two sides are merged with
their harmonic mean ("tradeoff").
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ModelConfig
from .data import ClickEvent
from .errors import ContractError, DimensionError
from .model import D2NNModel, IndexedNews, assemble_batch

_SCORE_CHUNK = 512


def rmse(labels: Sequence[float], scores: Sequence[float]) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(scores, dtype=np.float64)
    if y.shape != p.shape or y.size == 0:
        raise DimensionError(f"rmse needs matching non-empty arrays, got {y.shape} and {p.shape}")
    return float(np.sqrt(np.mean((y - p) ** 2)))


def auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Probability that a positive outranks a negative; ties count half."""
    y = np.asarray(labels)
    p = np.asarray(scores, dtype=np.float64)
    pos = p[y == 1]
    neg = p[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ContractError("auc needs at least one positive and one negative")
    # rank-sum formulation with midranks for ties
    both = np.concatenate([pos, neg])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty(both.size, dtype=np.float64)
    sorted_vals = both[order]
    i = 0
    while i < both.size:
        j = i
        while j + 1 < both.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    r_pos = ranks[: pos.size].sum()
    return float((r_pos - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))


def _ranked_order(scores: np.ndarray) -> np.ndarray:
    """Descending score order, ties broken by original position (stable)."""
    return np.argsort(-scores, kind="mergesort")


def ndcg_at_k(labels: Sequence[int], scores: Sequence[float], k: int) -> float:
    """Binary NDCG with a log2(i + 1) discount (positions start at 1).

    Returns 0.0 when the list has no positive item.
    """
    if k < 1:
        raise DimensionError(f"k must be >= 1, got {k}")
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(scores, dtype=np.float64)
    if y.shape != p.shape or y.size == 0:
        raise DimensionError("ndcg needs matching non-empty labels and scores")
    n_pos = int(y.sum())
    if n_pos == 0:
        return 0.0
    top = _ranked_order(p)[:k]
    discounts = 1.0 / np.log2(np.arange(2, top.size + 2))
    dcg = float((y[top] * discounts).sum())
    ideal = discounts[: min(n_pos, top.size)].sum()
    return dcg / float(ideal)


def pairwise_dissimilarity(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, clamped to [0, 2]; if either vector is all
    zeros the pair counts as fully dissimilar (1.0)."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    cos = float(np.dot(a, b) / (na * nb))
    return float(np.clip(1.0 - cos, 0.0, 2.0))


def div_at_k(features: np.ndarray, scores: Sequence[float], k: int) -> Optional[float]:
    """Mean pairwise dissimilarity among the top-k items; None when fewer
    than two items are ranked."""
    if k < 1:
        raise DimensionError(f"k must be >= 1, got {k}")
    feats = np.asarray(features, dtype=np.float64)
    p = np.asarray(scores, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != p.shape[0]:
        raise DimensionError(f"features {feats.shape} do not match {p.shape[0]} scores")
    top = _ranked_order(p)[:k]
    m = top.size
    if m < 2:
        return None
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += pairwise_dissimilarity(feats[top[i]], feats[top[j]])
    return 2.0 * total / (m * (m - 1))


def tradeoff(accuracy: float, diversity: float) -> float:
    """Harmonic mean of an accuracy score and a diversity score."""
    if accuracy + diversity == 0.0:
        return 0.0
    return 2.0 * accuracy * diversity / (accuracy + diversity)


# -- evaluation driver -----------------------------------------------------


@dataclass
class EvalResult:
    rmse: float
    auc: Optional[float]
    ndcg: dict[int, float]
    div: dict[int, float]
    mean_ndcg: float
    mean_div: float
    tradeoff: float
    n_events: int = 0
    skipped_div: int = 0

    def row(self) -> dict[str, float]:
        out = {"rmse": self.rmse, "auc": float("nan") if self.auc is None else self.auc}
        for k, v in self.ndcg.items():
            out[f"ndcg@{k}"] = v
        for k, v in self.div.items():
            out[f"div@{k}"] = v
        out["mean_ndcg"] = self.mean_ndcg
        out["mean_div"] = self.mean_div
        out["tradeoff"] = self.tradeoff
        return out


def encode_catalog(model: D2NNModel, news_idx: IndexedNews) -> np.ndarray:
    """News vectors for the whole catalog as a plain [N, D] array."""
    out = np.zeros((len(news_idx), model.cfg.embed_dim))
    for start in range(0, len(news_idx), _SCORE_CHUNK):
        sel = np.arange(start, min(start + _SCORE_CHUNK, len(news_idx)))
        out[sel] = model.encode_news_rows(news_idx, sel).data
    return out


def diversity_features(news_idx: IndexedNews, news_vecs: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Per-item feature used for DIV: the learned vector, or a category
    one-hot when configured."""
    if cfg.diversity_feature == "repr":
        return news_vecs
    n_cat = int(news_idx.cat_ids.max()) + 1
    onehot = np.zeros((len(news_idx), n_cat))
    onehot[np.arange(len(news_idx)), news_idx.cat_ids] = 1.0
    return onehot


def candidate_pool(
    event: ClickEvent,
    news_idx: IndexedNews,
    rng: np.random.Generator,
    pool_size: int = 50,
) -> tuple[list[int], np.ndarray]:
    """Catalog rows and labels to rank for one test event.

    Uses the event's logged impression candidates when it has any negatives;
    otherwise pairs the clicked item with ``pool_size - 1`` sampled
    non-clicked items.
    """
    rows = []
    labels = []
    for nid, label in event.impression.candidates:
        row = news_idx.row.get(nid)
        if row is not None:
            rows.append(row)
            labels.append(label)
    if sum(labels) >= 1 and len(labels) > sum(labels):
        return rows, np.asarray(labels)
    pos_row = news_idx.row[event.news_id]
    clicked = {news_idx.row.get(nid) for nid in event.impression.history}
    clicked.add(pos_row)
    pool = [r for r in range(len(news_idx)) if r not in clicked]
    take = min(pool_size - 1, len(pool))
    negs = list(rng.choice(len(pool), size=take, replace=False)) if take else []
    rows = [pos_row] + [pool[int(i)] for i in negs]
    return rows, np.asarray([1] + [0] * take)


def evaluate_model(
    model: D2NNModel,
    news_idx: IndexedNews,
    events: Sequence[ClickEvent],
    ks: Sequence[int] = (5, 10, 20, 50),
    seed: int = 0,
) -> EvalResult:
    """Rank each event's candidate pool; AUC/RMSE are global over all scored
    candidates, NDCG@k and DIV@k are averaged over events."""
    if not events:
        raise ContractError("evaluate_model needs at least one event")
    rng = np.random.default_rng(seed)
    cfg = model.cfg
    news_vecs = encode_catalog(model, news_idx)
    feats = diversity_features(news_idx, news_vecs, cfg)

    pools = [candidate_pool(ev, news_idx, rng) for ev in events]
    reader_vecs = _reader_vectors(model, news_idx, events, news_vecs)

    all_labels: list[np.ndarray] = []
    all_scores: list[np.ndarray] = []
    ndcg_sums = {k: 0.0 for k in ks}
    div_sums = {k: 0.0 for k in ks}
    div_counts = {k: 0 for k in ks}
    skipped = 0
    for i, (rows, labels) in enumerate(pools):
        scores = _sigmoid(news_vecs[rows] @ reader_vecs[i])
        all_labels.append(labels)
        all_scores.append(scores)
        for k in ks:
            ndcg_sums[k] += ndcg_at_k(labels, scores, k)
            d = div_at_k(feats[rows], scores, k)
            if d is None:
                skipped += 1
            else:
                div_sums[k] += d
                div_counts[k] += 1
    y = np.concatenate(all_labels)
    p = np.concatenate(all_scores)
    global_auc = auc(y, p) if 0 < y.sum() < y.size else None
    n = len(events)
    ndcg = {k: ndcg_sums[k] / n for k in ks}
    div = {k: (div_sums[k] / div_counts[k] if div_counts[k] else 0.0) for k in ks}
    mean_ndcg = float(np.mean(list(ndcg.values())))
    mean_div = float(np.mean(list(div.values())))
    return EvalResult(
        rmse=rmse(y, p),
        auc=global_auc,
        ndcg=ndcg,
        div=div,
        mean_ndcg=mean_ndcg,
        mean_div=mean_div,
        tradeoff=tradeoff(mean_ndcg, mean_div),
        n_events=n,
        skipped_div=skipped,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _reader_vectors(
    model: D2NNModel,
    news_idx: IndexedNews,
    events: Sequence[ClickEvent],
    news_vecs: np.ndarray,
) -> np.ndarray:
    """Reader vectors [n_events, D], batched; candidate slot reuses the
    first history row (the candidate score is computed separately)."""
    from .autograd import Tensor

    cfg = model.cfg
    out = np.zeros((len(events), cfg.embed_dim))
    for start in range(0, len(events), _SCORE_CHUNK):
        chunk = events[start : start + min(_SCORE_CHUNK, len(events) - start)]
        samples = []
        for ev in chunk:
            hist = [news_idx.row[nid] for nid in ev.impression.history if nid in news_idx.row]
            samples.append((hist, hist[0] if hist else 0, 0))
        batch = assemble_batch(samples, cfg.long_term_cap, cfg.recent_window)
        reprs = Tensor(news_vecs[batch.news_rows])
        readers = model.encode_readers(
            reprs, batch.lt_idx, batch.lt_mask, batch.st_idx, batch.st_mask
        )
        out[start : start + len(chunk)] = readers.data
    return out


# -- report files ----------------------------------------------------------

METRIC_ROW_ORDER = ("rmse", "auc", "ndcg", "div", "mean_ndcg", "mean_div", "tradeoff")


def write_metrics_csv(result: EvalResult, path: str, ks: Sequence[int] = (5, 10, 20, 50)) -> None:
    """Fixed-order metric,k,value rows; metrics without a cutoff leave the k
    column empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "k", "value"])
        writer.writerow(["rmse", "", _fmt(result.rmse)])
        writer.writerow(["auc", "", "" if result.auc is None else _fmt(result.auc)])
        for k in ks:
            writer.writerow(["ndcg", k, _fmt(result.ndcg[k])])
        for k in ks:
            writer.writerow(["div", k, _fmt(result.div[k])])
        writer.writerow(["mean_ndcg", "", _fmt(result.mean_ndcg)])
        writer.writerow(["mean_div", "", _fmt(result.mean_div)])
        writer.writerow(["tradeoff", "", _fmt(result.tradeoff)])


def _fmt(v: float) -> str:
    return f"{v:.6f}"
