"""Data loading: MIND-style TSV parsing, tokenization, vocabularies,
pretrained embedding files, synthetic dataset generation and the
leave-one-out split."""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, ContractError, ParseError

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TIME_FORMATS = ("%m/%d/%Y %I:%M:%S %p", "%Y-%m-%d %H:%M:%S")


# -- domain types ----------------------------------------------------------


@dataclass(frozen=True)
class NewsItem:
    """One article. Token fields hold normalized token strings; padding to
    fixed lengths happens when a dataset is indexed for the model."""

    news_id: str
    category: str
    subcategory: str
    headline_tokens: tuple[str, ...]
    snippet_tokens: tuple[str, ...]
    publication_time: Optional[float] = None


@dataclass(frozen=True)
class ImpressionRecord:
    impression_id: str
    reader_id: str
    time: float
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]

    def positives(self) -> list[str]:
        return [nid for nid, label in self.candidates if label == 1]


@dataclass(frozen=True)
class ReaderHistory:
    """A reader's chronologically ordered clicks (oldest first)."""

    reader_id: str
    clicks: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class ClickEvent:
    """One positive interaction, tied back to the impression it came from."""

    reader_id: str
    time: float
    news_id: str
    impression: ImpressionRecord


@dataclass
class SplitResult:
    """Per-reader leave-one-out partition of click events."""

    train: list[ClickEvent]
    validation: list[ClickEvent]
    test: list[ClickEvent]


class Vocabulary:
    """Token <-> id map with reserved ids 0 (PAD) and 1 (UNK)."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str], length: int) -> np.ndarray:
        """Ids padded/truncated to exactly ``length`` with PAD id 0."""
        ids = [self.id(t) for t in tokens][:length]
        out = np.zeros(length, dtype=np.int64)
        out[: len(ids)] = ids
        return out


@dataclass
class EmbeddingTable:
    """Token embedding matrix; row 0 (PAD) stays zero and is exempt from
    weight decay."""

    vocab: Vocabulary
    matrix: Tensor
    trainable: bool = True
    coverage: float = 0.0


# -- tokenization and parsing ----------------------------------------------


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenizer; strips edge punctuation, drops
    pure-punctuation tokens."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def _parse_time(text: str, path: str, lineno: int) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        pass
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp()
        except ValueError:
            continue
    raise ParseError(f"{path}:{lineno}: unparseable time {text!r}")


def parse_news_tsv(path: str) -> list[NewsItem]:
    """Parse a MIND-format news.tsv.

    Columns: news_id, category, subcategory, title, abstract, url,
    title_entities, abstract_entities (the last three may be empty and are
    ignored).
    """
    items: list[NewsItem] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 5:
                raise ParseError(f"{path}:{lineno}: expected >= 5 columns, got {len(cols)}")
            nid, category, subcategory, title, abstract = cols[:5]
            if nid in seen:
                raise ParseError(f"{path}:{lineno}: duplicate news id {nid!r}")
            seen.add(nid)
            items.append(
                NewsItem(
                    news_id=nid,
                    category=category,
                    subcategory=subcategory,
                    headline_tokens=tuple(tokenize(title)),
                    snippet_tokens=tuple(tokenize(abstract)),
                )
            )
    return items


def parse_behaviors_tsv(path: str) -> list[ImpressionRecord]:
    """Parse a MIND-format behaviors.tsv.

    Columns: impression_id, user_id, time, history (space-separated ids),
    impressions (space-separated "newsid-label" pairs).
    """
    records: list[ImpressionRecord] = []
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 5:
                raise ParseError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
            imp_id, reader_id, time_s, history_s, impressions_s = cols[:5]
            candidates = []
            for pair in impressions_s.split():
                nid, _, label_s = pair.rpartition("-")
                if not nid or label_s not in ("0", "1"):
                    raise ParseError(f"{path}:{lineno}: bad impression entry {pair!r}")
                candidates.append((nid, int(label_s)))
            t = _parse_time(time_s, path, lineno)
            records.append(
                ImpressionRecord(
                    impression_id=imp_id,
                    reader_id=reader_id,
                    time=0.0 if t is None else t,
                    history=tuple(history_s.split()),
                    candidates=tuple(candidates),
                )
            )
    return records


def write_news_tsv(items: Sequence[NewsItem], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in items:
            fh.write(
                "\t".join(
                    [
                        it.news_id,
                        it.category,
                        it.subcategory,
                        " ".join(it.headline_tokens),
                        " ".join(it.snippet_tokens),
                        "",
                        "",
                        "",
                    ]
                )
                + "\n"
            )


def write_behaviors_tsv(records: Sequence[ImpressionRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(
                "\t".join(
                    [
                        rec.impression_id,
                        rec.reader_id,
                        repr(rec.time),
                        " ".join(rec.history),
                        " ".join(f"{nid}-{label}" for nid, label in rec.candidates),
                    ]
                )
                + "\n"
            )


# -- vocabularies and embeddings -------------------------------------------


def build_vocabulary(corpus: Sequence[NewsItem], min_count: int = 3) -> Vocabulary:
    """Tokens with frequency >= min_count, ids in descending frequency order
    (ties broken lexicographically)."""
    if min_count < 1:
        raise ContractError(f"min_count must be >= 1, got {min_count}")
    if not corpus:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for item in corpus:
        for tok in item.headline_tokens + item.snippet_tokens:
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def taxonomy_vocabulary(corpus: Sequence[NewsItem], subcategory: bool = False) -> Vocabulary:
    labels = sorted({it.subcategory if subcategory else it.category for it in corpus})
    return Vocabulary(labels)


def init_embedding_table(
    vocab: Vocabulary, dim: int, rng: np.random.Generator, trainable: bool = True
) -> EmbeddingTable:
    mat = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    mat[PAD_ID] = 0.0
    return EmbeddingTable(vocab, Tensor(mat, requires_grad=trainable), trainable)


def load_embedding_file(
    path: str, vocab: Vocabulary, dim: int, rng: np.random.Generator, trainable: bool = True
) -> EmbeddingTable:
    """Fill vocab rows from a ``token v_1 ... v_D`` text file.

    Tokens absent from the file keep their seeded uniform(-0.1, 0.1) init;
    the PAD row is zeroed. The coverage fraction is logged and stored on the
    returned table.
    """
    table = init_embedding_table(vocab, dim, rng, trainable)
    mat = table.matrix.data
    hit = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            tok, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ConfigError(
                    f"{path}:{lineno}: expected {dim} values for {tok!r}, got {len(values)}"
                )
            idx = vocab.token_to_id.get(tok)
            if idx is not None and idx >= 2:
                mat[idx] = [float(v) for v in values]
                hit += 1
    n_real = max(len(vocab) - 2, 1)
    table.coverage = hit / n_real
    mat[PAD_ID] = 0.0
    log.info("embedding file %s covered %d/%d tokens (%.3f)", path, hit, n_real, table.coverage)
    return table


# -- leave-one-out split ---------------------------------------------------


def histories_from_impressions(impressions: Sequence[ImpressionRecord]) -> list[ReaderHistory]:
    """Collect each reader's positive clicks, ordered by time (stable)."""
    per_reader: dict[str, list[tuple[str, float]]] = {}
    for rec in impressions:
        for nid in rec.positives():
            per_reader.setdefault(rec.reader_id, []).append((nid, rec.time))
    out = []
    for reader_id, clicks in per_reader.items():
        clicks.sort(key=lambda c: c[1])
        out.append(ReaderHistory(reader_id, tuple(clicks)))
    return out


def split_leave_one_out(
    histories: Sequence[ReaderHistory],
) -> tuple[dict[str, list[tuple[str, float]]], dict[str, list[tuple[str, float]]], dict[str, list[tuple[str, float]]]]:
    """Per reader: last click -> test, second-last -> validation, rest ->
    train. Readers with fewer than 3 clicks contribute to train only."""
    train: dict[str, list[tuple[str, float]]] = {}
    validation: dict[str, list[tuple[str, float]]] = {}
    test: dict[str, list[tuple[str, float]]] = {}
    for h in histories:
        clicks = sorted(h.clicks, key=lambda c: c[1])
        if len(clicks) >= 3:
            train[h.reader_id] = clicks[:-2]
            validation[h.reader_id] = [clicks[-2]]
            test[h.reader_id] = [clicks[-1]]
        elif clicks:
            train[h.reader_id] = clicks
    return train, validation, test


def split_click_events(impressions: Sequence[ImpressionRecord]) -> SplitResult:
    """Leave-one-out over click events, keeping each event's impression for
    candidate pools. Same rule as split_leave_one_out."""
    per_reader: dict[str, list[ClickEvent]] = {}
    for rec in impressions:
        for nid in rec.positives():
            per_reader.setdefault(rec.reader_id, []).append(
                ClickEvent(rec.reader_id, rec.time, nid, rec)
            )
    result = SplitResult([], [], [])
    for events in per_reader.values():
        events.sort(key=lambda e: e.time)
        if len(events) >= 3:
            result.train.extend(events[:-2])
            result.validation.append(events[-2])
            result.test.append(events[-1])
        else:
            result.train.extend(events)
    return result


# -- synthetic data --------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs for the seeded topic-mixture generator.

    Each topic owns a category, a set of subcategories and a token
    sub-vocabulary. A reader has a long-term topic mixture concentrated on a
    preferred topic plus a preferred subcategory per topic; each session
    mixes the long-term mixture with a freshly drawn one-hot drift topic at
    ``mixing_weight`` (1.0 = pure long-term). Impression candidates pair the
    clicked item with negatives whose topics are drawn from the complement
    of the session mixture.
    """

    topics: int = 2
    news_count: int = 500
    reader_count: int = 200
    sessions_per_reader: int = 5
    session_length: int = 5
    mixing_weight: float = 0.7
    subtopics: int = 5
    subtopic_affinity: float = 0.9
    dominant_prob: float = 0.98
    candidates_per_impression: int = 25
    tokens_per_topic: int = 30
    tokens_per_subtopic: int = 10
    headline_length: int = 6
    snippet_length: int = 10

    def validate(self) -> None:
        if self.topics < 2:
            raise ConfigError("synthetic data needs at least 2 topics")
        if self.news_count < self.topics * self.subtopics:
            raise ConfigError("news_count must cover every (topic, subtopic) bucket")


def generate_synthetic(
    config: SyntheticConfig, seed: int
) -> tuple[list[NewsItem], list[ImpressionRecord]]:
    """Deterministic synthetic corpus + impression log for the given seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    T, S = config.topics, config.subtopics

    topic_tokens = [[f"t{t}w{j}" for j in range(config.tokens_per_topic)] for t in range(T)]
    sub_tokens = [
        [[f"t{t}s{s}w{j}" for j in range(config.tokens_per_subtopic)] for s in range(S)]
        for t in range(T)
    ]

    def sample_words(pool: list[str], count: int) -> list[str]:
        return [pool[int(i)] for i in rng.integers(len(pool), size=count)]

    news: list[NewsItem] = []
    buckets: dict[tuple[int, int], list[int]] = {(t, s): [] for t in range(T) for s in range(S)}
    news_topic = np.empty(config.news_count, dtype=np.int64)
    for n in range(config.news_count):
        t = int(rng.integers(T)) if n >= T * S else n // S
        s = int(rng.integers(S)) if n >= T * S else n % S
        news_topic[n] = t
        buckets[(t, s)].append(n)

        nh = config.headline_length
        headline = sample_words(topic_tokens[t], nh - nh // 2) + sample_words(
            sub_tokens[t][s], nh // 2
        )
        ns = config.snippet_length
        snippet = sample_words(topic_tokens[t], ns - ns // 2) + sample_words(sub_tokens[t][s], ns // 2)
        news.append(
            NewsItem(
                news_id=f"N{n}",
                category=f"cat{t}",
                subcategory=f"cat{t}sub{s}",
                headline_tokens=tuple(headline),
                snippet_tokens=tuple(snippet),
                publication_time=float(n),
            )
        )

    topic_items = [np.flatnonzero(news_topic == t) for t in range(T)]

    def pick_item(t: int, s: int) -> int:
        bucket = buckets[(t, s)]
        if bucket:
            return bucket[int(rng.integers(len(bucket)))]
        pool = topic_items[t]
        return int(pool[int(rng.integers(len(pool)))])

    impressions: list[ImpressionRecord] = []
    eps = (1.0 - config.dominant_prob) / max(T - 1, 1)
    imp_counter = 0
    for r in range(config.reader_count):
        preferred = int(rng.integers(T))
        long_mix = np.full(T, eps)
        long_mix[preferred] = config.dominant_prob
        pref_sub = rng.integers(S, size=T)
        clicked: list[str] = []
        clicked_set: set[str] = set()
        t_base = float(r) * 1e6
        for sess in range(config.sessions_per_reader):
            drift = np.zeros(T)
            drift[int(rng.integers(T))] = 1.0
            mix = config.mixing_weight * long_mix + (1.0 - config.mixing_weight) * drift
            complement = 1.0 - mix
            complement /= complement.sum()
            for j in range(config.session_length):
                topic = int(rng.choice(T, p=mix))
                if rng.random() < config.subtopic_affinity:
                    sub = int(pref_sub[topic])
                else:
                    sub = int(rng.integers(S))
                pos = pick_item(topic, sub)
                pos_id = news[pos].news_id
                negatives: list[str] = []
                guard = 0
                while len(negatives) < config.candidates_per_impression - 1 and guard < 10000:
                    guard += 1
                    nt = int(rng.choice(T, p=complement))
                    nsub = int(rng.integers(S))
                    cand = news[pick_item(nt, nsub)].news_id
                    if cand == pos_id or cand in clicked_set or cand in negatives:
                        continue
                    negatives.append(cand)
                candidates = [(pos_id, 1)] + [(nid, 0) for nid in negatives]
                t_click = t_base + sess * 1000.0 + j
                impressions.append(
                    ImpressionRecord(
                        impression_id=f"I{imp_counter}",
                        reader_id=f"R{r}",
                        time=t_click,
                        history=tuple(clicked),
                        candidates=tuple(candidates),
                    )
                )
                imp_counter += 1
                clicked.append(pos_id)
                clicked_set.add(pos_id)
    return news, impressions
