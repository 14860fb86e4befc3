"""Reader encoder: long-term interest summation, LSTM short-term encoding
over the recent click window, and diversity-aware attention over the hidden
states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError
from .news import additive_attention, self_attention

_ZERO_CACHE: dict[int, Tensor] = {}


@dataclass
class ReaderEncoderParams:
    """LSTM gate weights act on [h_{t-1}; x_t] (2D -> D)."""

    w_forget: Tensor  # [D, 2D]
    w_input: Tensor
    w_cell: Tensor
    w_output: Tensor
    b_forget: Tensor  # [D]
    b_input: Tensor
    b_cell: Tensor
    b_output: Tensor
    div_proj: Tensor  # [A, D]
    div_bias: Tensor  # [A]
    div_query: Tensor  # [A]
    combine_proj: Optional[Tensor] = None  # [D, 2D], concat combination rule
    sa_query: Optional[Tensor] = None  # [heads, D, D], multi-head reader variant
    sa_value: Optional[Tensor] = None  # [heads, D//heads, D]


@dataclass
class ReaderRepr:
    long_term: Tensor  # [..., D]
    short_term: Tensor  # [..., D], last hidden state
    short_term_div: Tensor  # [..., D]
    vector: Tensor  # [..., D]
    div_weights: Optional[Tensor]  # [..., L]


def _zeros(dim: int) -> Tensor:
    t = _ZERO_CACHE.get(dim)
    if t is None:
        t = Tensor(np.zeros(dim))
        _ZERO_CACHE[dim] = t
    return t


def long_term_interest(click_reprs: Sequence[Tensor], dim: int) -> Tensor:
    """Unordered sum of the clicked-news representations; empty history
    gives the zero vector."""
    if len(click_reprs) == 0:
        return _zeros(dim)
    out = click_reprs[0]
    for r in click_reprs[1:]:
        out = out + r
    return out


def lstm_step(prev_h: Tensor, prev_c: Tensor, x: Tensor, params: ReaderEncoderParams):
    """One LSTM step; works on [D] vectors or [B, D] batches."""
    z = ag.concat([prev_h, x], axis=-1)
    f = ag.sigmoid(ag.matmul(z, params.w_forget, transpose_b=True) + params.b_forget)
    i = ag.sigmoid(ag.matmul(z, params.w_input, transpose_b=True) + params.b_input)
    cc = ag.tanh(ag.matmul(z, params.w_cell, transpose_b=True) + params.b_cell)
    c = f * prev_c + i * cc
    o = ag.sigmoid(ag.matmul(z, params.w_output, transpose_b=True) + params.b_output)
    h = o * ag.tanh(c)
    return h, c


def short_term_interest(
    recent_click_reprs: Sequence[Tensor], params: ReaderEncoderParams, dim: int
):
    """Run the LSTM over the recent window from a zero state. Returns the
    hidden-state sequence and the last hidden state (zero for an empty
    window)."""
    h = _zeros(dim)
    c = _zeros(dim)
    hidden = []
    for x in recent_click_reprs:
        h, c = lstm_step(h, c, x, params)
        hidden.append(h)
    return hidden, h


def diversity_attention(hidden_states: Sequence[Tensor], params: ReaderEncoderParams, dim: int):
    """Additive attention over the LSTM hidden states; empty input pools to
    the zero vector with no weights."""
    if len(hidden_states) == 0:
        return _zeros(dim), None
    stacked = ag.stack(list(hidden_states), axis=-2)
    pooled, weights = additive_attention(
        stacked, params.div_proj, params.div_bias, params.div_query
    )
    return pooled, weights


def combine_reader(
    long_term: Tensor, short_term_div: Tensor, params: Optional[ReaderEncoderParams] = None
) -> Tensor:
    """Merge long-term and diversified short-term interests. Elementwise sum
    by default; a concat+projection rule when the parameters carry one."""
    if params is not None and params.combine_proj is not None:
        return ag.matmul(
            ag.concat([long_term, short_term_div], axis=-1), params.combine_proj, transpose_b=True
        )
    return long_term + short_term_div


def encode_reader(
    click_reprs: Sequence[Tensor],
    params: ReaderEncoderParams,
    dim: int,
    *,
    recent_window: int = 100,
    base: str = "d2nn",
    reader_attention: bool = True,
) -> ReaderRepr:
    """Full single-reader path over an ordered click-representation list."""
    if base not in ("d2nn", "lti", "sti"):
        raise ConfigError(f"unknown reader base {base!r}")
    r_lt = long_term_interest(click_reprs, dim)
    window = list(click_reprs[-recent_window:])
    hidden, r_st = short_term_interest(window, params, dim)
    if params.sa_query is not None and hidden:
        ctx = self_attention(ag.stack(hidden, axis=-2), params.sa_query, params.sa_value)
        r_std = ag.tmean(ctx, axis=-2)
        weights = None
    elif reader_attention:
        r_std, weights = diversity_attention(hidden, params, dim)
    else:
        r_std, weights = r_st, None
    if base == "lti":
        vec = r_lt
    elif base == "sti":
        vec = r_std
    else:
        vec = combine_reader(r_lt, r_std, params)
    return ReaderRepr(r_lt, r_st, r_std, vec, weights)
