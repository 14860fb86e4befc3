"""Model assembly: parameter initialization per variant, dataset indexing,
and the batched forward pass used by training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig, Variant
from .data import EmbeddingTable, NewsItem, Vocabulary
from .errors import ConfigError
from .news import (
    FieldParams,
    NewsEncoderParams,
    TaxonomyParams,
    additive_attention,
    encode_field,
    encode_taxonomy,
    self_attention,
    uniform_attention,
)
from .reader import ReaderEncoderParams, lstm_step


# -- dataset indexing ------------------------------------------------------


@dataclass
class IndexedNews:
    """Token/taxonomy id matrices for the whole catalog, padded to the
    configured lengths."""

    ids: list[str]
    row: dict[str, int]
    head_tokens: np.ndarray  # [N, M_h]
    snip_tokens: np.ndarray  # [N, M_s]
    cat_ids: np.ndarray  # [N]
    subcat_ids: np.ndarray  # [N]

    def __len__(self) -> int:
        return len(self.ids)


def index_news(
    items: Sequence[NewsItem],
    word_vocab: Vocabulary,
    cat_vocab: Vocabulary,
    subcat_vocab: Vocabulary,
    cfg: ModelConfig,
) -> IndexedNews:
    n = len(items)
    head = np.zeros((n, cfg.max_headline), dtype=np.int64)
    snip = np.zeros((n, cfg.max_snippet), dtype=np.int64)
    cats = np.zeros(n, dtype=np.int64)
    subcats = np.zeros(n, dtype=np.int64)
    ids = []
    for i, item in enumerate(items):
        ids.append(item.news_id)
        head[i] = word_vocab.encode(item.headline_tokens, cfg.max_headline)
        snip[i] = word_vocab.encode(item.snippet_tokens, cfg.max_snippet)
        cats[i] = cat_vocab.id(item.category)
        subcats[i] = subcat_vocab.id(item.subcategory)
    return IndexedNews(ids, {nid: i for i, nid in enumerate(ids)}, head, snip, cats, subcats)


# -- parameters ------------------------------------------------------------


class D2NNModel:
    """All trainable parameters plus the variant/config they were built for.

    Parameters are created in a fixed order from the given rng, so two
    models built with the same inputs are bitwise identical.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        variant: Variant,
        word_table: EmbeddingTable,
        n_categories: int,
        n_subcategories: int,
        rng: np.random.Generator,
    ):
        cfg.validate()
        d = cfg.embed_dim
        if variant.heads and d % variant.heads != 0:
            raise ConfigError(f"embed_dim {d} is not divisible by {variant.heads} heads")
        self.cfg = cfg
        self.variant = variant
        self.word_embed = word_table.matrix
        self._params: dict[str, Tensor] = {}
        self._pad_row_exempt: set[str] = set()
        if word_table.trainable:
            self._register("word_embed", self.word_embed, pad_row=True)

        def uniform(name: str, shape, scale: float = 0.1) -> Tensor:
            t = Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)
            self._register(name, t)
            return t

        def field(prefix: str) -> FieldParams:
            a = cfg.attn_hidden
            if variant.heads:
                dh = d // variant.heads
                sa_q = uniform(f"{prefix}.sa_query", (variant.heads, d, d), 1.0 / np.sqrt(d))
                sa_v = uniform(f"{prefix}.sa_value", (variant.heads, dh, d), 1.0 / np.sqrt(d))
                return FieldParams(
                    attn_proj=uniform(f"{prefix}.attn_proj", (a, d)),
                    attn_bias=uniform(f"{prefix}.attn_bias", (a,)),
                    attn_query=uniform(f"{prefix}.attn_query", (a,)),
                    sa_query=sa_q,
                    sa_value=sa_v,
                )
            c = cfg.conv_filters
            fan_in = cfg.filter_size * d
            return FieldParams(
                kernel=uniform(f"{prefix}.kernel", (c, cfg.filter_size, d), 1.0 / np.sqrt(fan_in)),
                kernel_bias=uniform(f"{prefix}.kernel_bias", (c,)),
                attn_proj=uniform(f"{prefix}.attn_proj", (a, c)),
                attn_bias=uniform(f"{prefix}.attn_bias", (a,)),
                attn_query=uniform(f"{prefix}.attn_query", (a,)),
                out_proj=uniform(f"{prefix}.out_proj", (d, c)),
            )

        headline = field("headline")
        snippet = None if variant.no_snippet else field("snippet")
        category = subcategory = None
        self.cat_embed = self.subcat_embed = None
        if not variant.no_taxonomy:
            self.cat_embed = Tensor(
                _embed_init(rng, n_categories, d), requires_grad=True
            )
            self._register("cat_embed", self.cat_embed, pad_row=True)
            self.subcat_embed = Tensor(
                _embed_init(rng, n_subcategories, d), requires_grad=True
            )
            self._register("subcat_embed", self.subcat_embed, pad_row=True)
            category = TaxonomyParams(
                weight=uniform("category.weight", (d, d)), bias=uniform("category.bias", (d,))
            )
            subcategory = TaxonomyParams(
                weight=uniform("subcategory.weight", (d, d)),
                bias=uniform("subcategory.bias", (d,)),
            )
        a = cfg.attn_hidden
        self.news = NewsEncoderParams(
            headline=headline,
            snippet=snippet,
            category=category,
            subcategory=subcategory,
            news_attn_proj=uniform("news_attn.proj", (a, d)),
            news_attn_bias=uniform("news_attn.bias", (a,)),
            news_attn_query=uniform("news_attn.query", (a,)),
        )

        s = 1.0 / np.sqrt(2 * d)
        self.reader = ReaderEncoderParams(
            w_forget=uniform("lstm.w_forget", (d, 2 * d), s),
            w_input=uniform("lstm.w_input", (d, 2 * d), s),
            w_cell=uniform("lstm.w_cell", (d, 2 * d), s),
            w_output=uniform("lstm.w_output", (d, 2 * d), s),
            b_forget=uniform("lstm.b_forget", (d,), s),
            b_input=uniform("lstm.b_input", (d,), s),
            b_cell=uniform("lstm.b_cell", (d,), s),
            b_output=uniform("lstm.b_output", (d,), s),
            div_proj=uniform("div_attn.proj", (a, d)),
            div_bias=uniform("div_attn.bias", (a,)),
            div_query=uniform("div_attn.query", (a,)),
        )
        if variant.heads:
            dh = d // variant.heads
            self.reader.sa_query = uniform(
                "reader.sa_query", (variant.heads, d, d), 1.0 / np.sqrt(d)
            )
            self.reader.sa_value = uniform(
                "reader.sa_value", (variant.heads, dh, d), 1.0 / np.sqrt(d)
            )
        if cfg.reader_combine == "concat":
            self.reader.combine_proj = uniform("reader.combine_proj", (d, 2 * d))

    def _register(self, name: str, tensor: Tensor, pad_row: bool = False) -> None:
        self._params[name] = tensor
        if pad_row:
            self._pad_row_exempt.add(name)

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    @property
    def pad_row_exempt(self) -> set[str]:
        """Parameter names whose row 0 is the PAD row (kept at zero and
        excluded from weight decay)."""
        return set(self._pad_row_exempt)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    # -- forward -----------------------------------------------------------

    def encode_news_rows(
        self,
        news_idx: IndexedNews,
        rows_sel: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        training: bool = False,
    ) -> Tensor:
        """Encode the selected catalog rows to [NB, D] news vectors."""
        dropout = self.cfg.dropout if training else 0.0
        fields = []
        h, _ = encode_field(
            news_idx.head_tokens[rows_sel],
            self.news.headline,
            self.word_embed,
            word_attention=not self.variant.no_word_attn,
            dropout=dropout,
            rng=rng,
        )
        fields.append(h)
        if self.news.snippet is not None:
            s, _ = encode_field(
                news_idx.snip_tokens[rows_sel],
                self.news.snippet,
                self.word_embed,
                word_attention=not self.variant.no_word_attn,
                dropout=dropout,
                rng=rng,
            )
            fields.append(s)
        if self.news.category is not None:
            fields.append(
                encode_taxonomy(news_idx.cat_ids[rows_sel], self.news.category, self.cat_embed)
            )
            fields.append(
                encode_taxonomy(
                    news_idx.subcat_ids[rows_sel], self.news.subcategory, self.subcat_embed
                )
            )
        if len(fields) == 1:
            return fields[0]
        stacked = ag.stack(fields, axis=-2)  # [NB, F, D]
        if self.variant.no_news_attn:
            pooled, _ = uniform_attention(stacked)
        else:
            pooled, _ = additive_attention(
                stacked,
                self.news.news_attn_proj,
                self.news.news_attn_bias,
                self.news.news_attn_query,
            )
        return pooled

    def encode_readers(
        self,
        news_reprs: Tensor,
        lt_idx: np.ndarray,
        lt_mask: np.ndarray,
        st_idx: np.ndarray,
        st_mask: np.ndarray,
    ) -> Tensor:
        """Batched reader path over local indices into ``news_reprs``.

        ``st_idx`` is left-padded so the final step of a non-empty window is
        always real; padded steps are gated out of the LSTM state and get
        exactly zero diversity-attention weight.
        """
        b, d = lt_idx.shape[0], self.cfg.embed_dim
        variant = self.variant
        r_lt = ag.weighted_sum(Tensor(lt_mask.astype(np.float64)), ag.rows(news_reprs, lt_idx))
        if variant.base == "lti":
            return r_lt
        window = st_idx.shape[1]
        any_real = st_mask.any()
        if window == 0 or not any_real:
            zero = Tensor(np.zeros((b, d)))
            r_st = r_std = zero
        else:
            x_seq = ag.rows(news_reprs, st_idx)  # [B, L, D]
            h = Tensor(np.zeros((b, d)))
            c = Tensor(np.zeros((b, d)))
            hidden = []
            for t in range(window):
                h_new, c_new = lstm_step(h, c, x_seq[:, t], self.reader)
                m = Tensor(st_mask[:, t : t + 1].astype(np.float64))
                keep = Tensor(1.0 - st_mask[:, t : t + 1].astype(np.float64))
                h = h_new * m + h * keep
                c = c_new * m + c * keep
                hidden.append(h)
            r_st = h
            stacked = ag.stack(hidden, axis=-2)  # [B, L, D]
            if self.reader.sa_query is not None:
                ctx = self_attention(stacked, self.reader.sa_query, self.reader.sa_value, st_mask)
                r_std, _ = uniform_attention(ctx, st_mask)
            elif variant.no_reader_attn:
                r_std = r_st
            else:
                r_std, _ = additive_attention(
                    stacked,
                    self.reader.div_proj,
                    self.reader.div_bias,
                    self.reader.div_query,
                    st_mask,
                )
        if variant.base == "lti":
            return r_lt
        if variant.base == "sti":
            return r_std
        if self.reader.combine_proj is not None:
            return ag.matmul(
                ag.concat([r_lt, r_std], axis=-1), self.reader.combine_proj, transpose_b=True
            )
        return r_lt + r_std


def _embed_init(rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
    mat = rng.uniform(-0.1, 0.1, size=(size, dim))
    mat[0] = 0.0
    return mat


# -- batch assembly --------------------------------------------------------


@dataclass
class Batch:
    news_rows: np.ndarray  # [NB] distinct catalog rows used by this batch
    lt_idx: np.ndarray  # [B, H] local indices into news_rows
    lt_mask: np.ndarray  # [B, H] bool
    st_idx: np.ndarray  # [B, L] local, left-padded
    st_mask: np.ndarray  # [B, L] bool
    cand_idx: np.ndarray  # [B] local
    labels: np.ndarray  # [B] float


def assemble_batch(
    samples: Sequence[tuple[Sequence[int], int, int]],
    long_term_cap: int,
    recent_window: int,
) -> Batch:
    """Pack (history rows, candidate row, label) samples into index arrays.

    Every referenced catalog row is listed once in ``news_rows``; the index
    arrays are local so the batch encodes each distinct news item a single
    time.
    """
    local: dict[int, int] = {}

    def loc(row: int) -> int:
        i = local.get(row)
        if i is None:
            i = len(local)
            local[row] = i
        return i

    hists = []
    cands = np.zeros(len(samples), dtype=np.int64)
    labels = np.zeros(len(samples), dtype=np.float64)
    for i, (hist, cand, label) in enumerate(samples):
        hists.append([loc(r) for r in hist[-long_term_cap:]])
        cands[i] = loc(cand)
        labels[i] = label
    h_max = max((len(h) for h in hists), default=0)
    window = min(recent_window, h_max) if h_max else 0
    b = len(samples)
    lt_idx = np.zeros((b, h_max), dtype=np.int64)
    lt_mask = np.zeros((b, h_max), dtype=bool)
    st_idx = np.zeros((b, window), dtype=np.int64)
    st_mask = np.zeros((b, window), dtype=bool)
    for i, h in enumerate(hists):
        lt_idx[i, : len(h)] = h
        lt_mask[i, : len(h)] = True
        recent = h[-window:] if window else []
        if recent:
            st_idx[i, -len(recent) :] = recent
            st_mask[i, -len(recent) :] = True
    news_rows = np.fromiter(local.keys(), dtype=np.int64, count=len(local))
    return Batch(news_rows, lt_idx, lt_mask, st_idx, st_mask, cands, labels)


def forward_batch(
    model: D2NNModel,
    news_idx: IndexedNews,
    batch: Batch,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Click probabilities [B] for a packed batch."""
    reprs = model.encode_news_rows(news_idx, batch.news_rows, rng=rng, training=training)
    readers = model.encode_readers(
        reprs, batch.lt_idx, batch.lt_mask, batch.st_idx, batch.st_mask
    )
    cands = ag.rows(reprs, batch.cand_idx)
    return ag.sigmoid(ag.tsum(readers * cands, axis=-1))
