"""News encoder: parallel headline/snippet/taxonomy networks with
word-level and news-level additive attention, plus the multi-head
self-attention contextualization variant.

All functions work on a single item ([M] token ids, [D] vectors) or on a
leading batch axis ([B, M], [B, D]); the ops are shape-generic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError


def additive_attention(
    values: Tensor,
    proj: Tensor,
    bias: Tensor,
    query: Tensor,
    mask: Optional[np.ndarray] = None,
):
    """Score each position as query . tanh(proj v + bias), softmax over the
    unmasked positions and pool. Returns (pooled [..., D], weights [..., M]);
    fully masked rows pool to zero with all-zero weights."""
    hidden = ag.tanh(ag.matmul(values, proj, transpose_b=True) + bias)
    scores = ag.matmul(hidden, query)
    weights = ag.softmax(scores, mask=mask)
    return ag.weighted_sum(weights, values), weights


def uniform_attention(values: Tensor, mask: Optional[np.ndarray] = None):
    """Unweighted mean over unmasked positions (word/news attention ablation)."""
    m = np.ones(values.shape[:-1]) if mask is None else np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=-1, keepdims=True)
    w = m / np.where(counts == 0.0, 1.0, counts)
    weights = Tensor(w)
    return ag.weighted_sum(weights, values), weights


@dataclass
class FieldParams:
    """Word-path parameters for one text field (headline or snippet)."""

    kernel: Optional[Tensor] = None  # [N_f, fs, D], conv path
    kernel_bias: Optional[Tensor] = None  # [N_f]
    attn_proj: Tensor = None  # [A, N_f] (conv) or [A, D] (self-attn)
    attn_bias: Tensor = None  # [A]
    attn_query: Tensor = None  # [A]
    out_proj: Optional[Tensor] = None  # [D, N_f], conv path only
    sa_query: Optional[Tensor] = None  # [heads, D, D], self-attn path
    sa_value: Optional[Tensor] = None  # [heads, D//heads, D]


@dataclass
class TaxonomyParams:
    weight: Tensor  # [D, D]
    bias: Tensor  # [D]


@dataclass
class NewsEncoderParams:
    headline: FieldParams
    snippet: Optional[FieldParams]
    category: Optional[TaxonomyParams]
    subcategory: Optional[TaxonomyParams]
    news_attn_proj: Tensor  # [A, D]
    news_attn_bias: Tensor  # [A]
    news_attn_query: Tensor  # [A]


@dataclass
class NewsRepr:
    """Final news vector plus the news-level field weights."""

    vector: Tensor  # [..., D]
    field_weights: Tensor  # [..., F]


def self_attention(
    we: Tensor, sa_query: Tensor, sa_value: Tensor, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Multi-head self-attention contextualization.

    Per head k: row-wise softmax of we_i . Q_k we_j over unmasked j, context
    pooled and projected by V_k; head outputs concatenated back to D.
    """
    heads = sa_query.shape[0]
    att_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
    outs = []
    for k in range(heads):
        scores = ag.matmul(ag.matmul(we, sa_query[k]), we, transpose_b=True)
        att = ag.softmax(scores, mask=att_mask)
        context = ag.matmul(att, we)
        outs.append(ag.matmul(context, sa_value[k], transpose_b=True))
    return ag.concat(outs, axis=-1)


def self_attention_weights(we: Tensor, sa_query: Tensor, mask=None) -> list[Tensor]:
    """Per-head attention matrices (for inspection and tests)."""
    att_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
    return [
        ag.softmax(ag.matmul(ag.matmul(we, sa_query[k]), we, transpose_b=True), mask=att_mask)
        for k in range(sa_query.shape[0])
    ]


def encode_field(
    tokens: np.ndarray,
    params: FieldParams,
    embeddings: Tensor,
    *,
    word_attention: bool = True,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
):
    """Encode one text field: embedding lookup, contextualization (conv or
    self-attention), attention pooling over non-PAD positions, optional
    output projection. Returns (field vector [..., D], word weights [..., M])."""
    tokens = np.asarray(tokens, dtype=np.int64)
    mask = tokens != 0
    we = ag.rows(embeddings, tokens)
    if dropout > 0.0:
        if rng is None:
            raise ConfigError("dropout requires an rng")
        we = ag.dropout(we, dropout, rng)
    if params.sa_query is not None:
        ce = self_attention(we, params.sa_query, params.sa_value, mask)
    else:
        ce = ag.conv1d(we, params.kernel, params.kernel_bias)
    if word_attention:
        pooled, weights = additive_attention(
            ce, params.attn_proj, params.attn_bias, params.attn_query, mask
        )
    else:
        pooled, weights = uniform_attention(ce, mask)
    if params.out_proj is not None:
        pooled = ag.matmul(pooled, params.out_proj, transpose_b=True)
    return pooled, weights


def encode_headline(tokens, params: NewsEncoderParams, embeddings: Tensor, **kw):
    return encode_field(tokens, params.headline, embeddings, **kw)


def encode_snippet(tokens, params: NewsEncoderParams, embeddings: Tensor, **kw):
    if params.snippet is None:
        raise ConfigError("snippet field is disabled in this variant")
    return encode_field(tokens, params.snippet, embeddings, **kw)


def encode_taxonomy(ids: np.ndarray, params: TaxonomyParams, embeddings: Tensor) -> Tensor:
    """Dense ReLU transform of a taxonomy embedding; unknown ids must already
    be mapped to the UNK row by the vocabulary."""
    e = ag.rows(embeddings, np.asarray(ids, dtype=np.int64))
    return ag.relu(ag.matmul(e, params.weight, transpose_b=True) + params.bias)


def combine_news(
    fields: Sequence[Tensor], params: NewsEncoderParams, *, news_attention: bool = True
) -> NewsRepr:
    """Weigh the active field vectors with the shared news-level attention
    (or a plain mean when disabled) and sum them."""
    if not fields:
        raise DimensionError("combine_news needs at least one field")
    stacked = ag.stack(list(fields), axis=-2)  # [..., F, D]
    if news_attention:
        pooled, weights = additive_attention(
            stacked, params.news_attn_proj, params.news_attn_bias, params.news_attn_query
        )
    else:
        pooled, weights = uniform_attention(stacked)
    return NewsRepr(vector=pooled, field_weights=weights)


def encode_field_selfattn(tokens, params: FieldParams, embeddings: Tensor, heads: int) -> Tensor:
    """Self-attention contextualization of one field (the conv replacement).

    Returns the contextualized sequence [..., M, D].
    """
    if params.sa_query is None or params.sa_query.shape[0] != heads:
        raise ConfigError(f"field parameters were not built for {heads} heads")
    tokens = np.asarray(tokens, dtype=np.int64)
    return self_attention(ag.rows(embeddings, tokens), params.sa_query, params.sa_value, tokens != 0)
