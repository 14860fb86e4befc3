"""Glue between a run configuration and the model pieces: load or generate
the dataset, build vocabularies and embeddings, index the catalog, split the
click log, and construct the model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig, parse_variant
from .data import (
    EmbeddingTable,
    ImpressionRecord,
    NewsItem,
    SplitResult,
    Vocabulary,
    build_vocabulary,
    generate_synthetic,
    init_embedding_table,
    load_embedding_file,
    parse_behaviors_tsv,
    parse_news_tsv,
    split_click_events,
    taxonomy_vocabulary,
)
from .model import D2NNModel, IndexedNews, index_news


@dataclass
class Prepared:
    news: list[NewsItem]
    impressions: list[ImpressionRecord]
    word_table: EmbeddingTable
    cat_vocab: Vocabulary
    subcat_vocab: Vocabulary
    news_idx: IndexedNews
    split: SplitResult


def prepare(cfg: RunConfig, seed: int) -> Prepared:
    """Load (or generate) the dataset named by the config and index it."""
    cfg.validate()
    if cfg.data.synthetic is not None:
        news, impressions = generate_synthetic(cfg.data.synthetic, seed)
    else:
        news = parse_news_tsv(cfg.data.news_path)
        impressions = parse_behaviors_tsv(cfg.data.behaviors_path)
    vocab = build_vocabulary(news, cfg.data.min_count)
    rng = np.random.default_rng(seed)
    if cfg.data.embedding_path:
        word_table = load_embedding_file(cfg.data.embedding_path, vocab, cfg.model.embed_dim, rng)
    else:
        word_table = init_embedding_table(vocab, cfg.model.embed_dim, rng)
    cat_vocab = taxonomy_vocabulary(news)
    subcat_vocab = taxonomy_vocabulary(news, subcategory=True)
    news_idx = index_news(news, vocab, cat_vocab, subcat_vocab, cfg.model)
    split = split_click_events(impressions)
    return Prepared(news, impressions, word_table, cat_vocab, subcat_vocab, news_idx, split)


def build_model(
    cfg: RunConfig, prepared: Prepared, seed: int, variant: str | None = None
) -> D2NNModel:
    """Deterministically initialize a model for the configured variant.

    The shared word table is copied so several models (e.g. ablation runs)
    can be trained from the same prepared data without interfering.
    """
    rng = np.random.default_rng(seed)
    src = prepared.word_table
    from .autograd import Tensor

    table = EmbeddingTable(
        src.vocab,
        Tensor(src.matrix.data.copy(), requires_grad=src.trainable),
        src.trainable,
        src.coverage,
    )
    return D2NNModel(
        cfg.model,
        parse_variant(variant if variant is not None else cfg.variant),
        table,
        len(prepared.cat_vocab),
        len(prepared.subcat_vocab),
        rng,
    )
