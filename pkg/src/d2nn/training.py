"""Training: negative sampling, the NLL objective, Adam with weight decay
and gradient clipping, the epoch loop with validation-AUC early stopping,
and binary checkpoints."""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import OptimizerConfig
from .data import ClickEvent, SplitResult
from .errors import ContractError, IntegrityError, NumericError
from .metrics import auc, candidate_pool, encode_catalog, _reader_vectors, _sigmoid
from .model import D2NNModel, IndexedNews, assemble_batch, forward_batch

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def nll_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of click/skip labels; probabilities are
    clamped away from 0 and 1 before the log."""
    y = np.asarray(labels, dtype=np.float64)
    if probs.shape != y.shape:
        raise ContractError(f"probs {probs.shape} do not match labels {y.shape}")
    p = ag.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = Tensor(y) * ag.log(p) + Tensor(1.0 - y) * ag.log(1.0 - p)
    return -ag.tmean(ll)


# -- sample construction ---------------------------------------------------


@dataclass
class TrainingSample:
    """One ranked instance: a history, a candidate row and a 0/1 label."""

    hist_rows: tuple[int, ...]
    cand_row: int
    label: int


def sample_negatives(
    event: ClickEvent,
    news_idx: IndexedNews,
    k: int,
    rng: np.random.Generator,
    reader_positives: set[str],
) -> list[int]:
    """Draw k non-clicked catalog rows for one click event.

    Preference order: the event's own impression negatives (shown but not
    clicked), then uniform catalog fallback. Rows the reader ever clicked are
    never drawn, and draws are without replacement.
    """
    pool = [
        news_idx.row[nid]
        for nid, label in event.impression.candidates
        if label == 0 and nid not in reader_positives and nid in news_idx.row
    ]
    rng.shuffle(pool)
    picked = pool[:k]
    if len(picked) < k:
        banned = {news_idx.row[nid] for nid in reader_positives if nid in news_idx.row}
        banned.update(picked)
        fallback = [r for r in range(len(news_idx)) if r not in banned]
        need = min(k - len(picked), len(fallback))
        extra = rng.choice(len(fallback), size=need, replace=False) if need else []
        picked.extend(fallback[int(i)] for i in extra)
    if len(picked) < k:
        raise ContractError(
            f"catalog too small to draw {k} negatives for reader {event.reader_id}"
        )
    return picked


def build_training_samples(
    events: Sequence[ClickEvent],
    news_idx: IndexedNews,
    neg_ratio: int,
    rng: np.random.Generator,
) -> list[TrainingSample]:
    """Expand click events into 1 positive + ``neg_ratio`` negative samples,
    all sharing the event's history."""
    positives_by_reader: dict[str, set[str]] = {}
    for ev in events:
        positives_by_reader.setdefault(ev.reader_id, set()).add(ev.news_id)
        for nid in ev.impression.history:
            positives_by_reader[ev.reader_id].add(nid)
    samples: list[TrainingSample] = []
    for ev in events:
        hist = tuple(
            news_idx.row[nid] for nid in ev.impression.history if nid in news_idx.row
        )
        pos_row = news_idx.row.get(ev.news_id)
        if pos_row is None:
            continue
        samples.append(TrainingSample(hist, pos_row, 1))
        for neg in sample_negatives(ev, news_idx, neg_ratio, rng, positives_by_reader[ev.reader_id]):
            samples.append(TrainingSample(hist, neg, 0))
    return samples


# -- optimizer -------------------------------------------------------------


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Adam with bias correction. L2 weight decay is added to the gradients;
    PAD rows of embedding tables are exempt and pinned at zero."""

    def __init__(
        self,
        params: dict[str, Tensor],
        cfg: OptimizerConfig,
        pad_row_exempt: Optional[set[str]] = None,
    ):
        self.params = params
        self.cfg = cfg
        self.pad_row_exempt = pad_row_exempt or set()
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.copy()
            if c.l2 > 0.0:
                decay = c.l2 * p.data
                if name in self.pad_row_exempt:
                    decay[0] = 0.0
                g += decay
            if name in self.pad_row_exempt:
                g[0] = 0.0
            m = self._m[name]
            v = self._v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if not np.all(np.isfinite(update)):
                raise NumericError(f"non-finite update for parameter {name!r}")
            p.data -= update
            if name in self.pad_row_exempt:
                p.data[0] = 0.0


# -- epoch loop ------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: Optional[float]


@dataclass
class TrainResult:
    model: D2NNModel
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auc: float = float("-inf")


def _batches(
    samples: Sequence[TrainingSample], batch_size: int, rng: np.random.Generator
) -> list[list[TrainingSample]]:
    order = rng.permutation(len(samples))
    return [
        [samples[int(i)] for i in order[s : s + batch_size]]
        for s in range(0, len(order), batch_size)
    ]


def train_epoch(
    model: D2NNModel,
    news_idx: IndexedNews,
    samples: Sequence[TrainingSample],
    adam: Adam,
    rng: np.random.Generator,
) -> float:
    """One pass over shuffled samples; returns the sample-weighted mean loss."""
    cfg = adam.cfg
    total = 0.0
    count = 0
    for group in _batches(samples, cfg.batch_size, rng):
        batch = assemble_batch(
            [(s.hist_rows, s.cand_row, s.label) for s in group],
            model.cfg.long_term_cap,
            model.cfg.recent_window,
        )
        model.zero_grad()
        probs = forward_batch(model, news_idx, batch, rng=rng, training=True)
        loss = nll_loss(probs, batch.labels)
        loss.backward()
        clip_gradients(model.named_parameters(), cfg.grad_clip)
        adam.step()
        total += loss.item() * len(group)
        count += len(group)
    return total / max(count, 1)


def validation_auc(
    model: D2NNModel,
    news_idx: IndexedNews,
    events: Sequence[ClickEvent],
    seed: int = 0,
) -> Optional[float]:
    """Global AUC over every validation candidate score; None when the pool
    has only one class."""
    if not events:
        return None
    rng = np.random.default_rng(seed)
    news_vecs = encode_catalog(model, news_idx)
    readers = _reader_vectors(model, news_idx, events, news_vecs)
    labels = []
    scores = []
    for i, ev in enumerate(events):
        rows, y = candidate_pool(ev, news_idx, rng)
        labels.append(y)
        scores.append(_sigmoid(news_vecs[rows] @ readers[i]))
    y = np.concatenate(labels)
    p = np.concatenate(scores)
    if y.sum() in (0, y.size):
        return None
    return auc(y, p)


def train(
    model: D2NNModel,
    news_idx: IndexedNews,
    split: SplitResult,
    cfg: OptimizerConfig,
    seed: int = 0,
) -> TrainResult:
    """Fit with early stopping on validation AUC.

    Stops after ``cfg.patience`` epochs without improvement (or at
    ``cfg.max_epochs``) and restores the best parameters.
    """
    rng = np.random.default_rng(seed)
    samples = build_training_samples(split.train, news_idx, cfg.neg_ratio, rng)
    if not samples:
        raise ContractError("no training samples; is the click log empty?")
    adam = Adam(model.named_parameters(), cfg, model.pad_row_exempt)
    result = TrainResult(model)
    best_state: Optional[dict[str, np.ndarray]] = None
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss = train_epoch(model, news_idx, samples, adam, rng)
        val = validation_auc(model, news_idx, split.validation, seed=seed)
        result.history.append(EpochStats(epoch, loss, val))
        log.info("epoch %d: train_loss=%.4f val_auc=%s", epoch, loss, val)
        score = val if val is not None else -loss
        if score > result.best_val_auc:
            result.best_val_auc = score
            result.best_epoch = epoch
            best_state = {n: p.data.copy() for n, p in model.named_parameters().items()}
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    if best_state is not None:
        for n, p in model.named_parameters().items():
            p.data[...] = best_state[n]
    return result


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"D2NNCKPT v1\n"


def save_checkpoint(path: str, params: dict[str, Tensor]) -> None:
    """Write parameters as: magic line, a little-endian manifest (entry
    count, then per entry name length/name/rank/dims as u32), float32 values
    in manifest order, and a trailing CRC-32 of everything before it."""
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<I", len(params))
    for name, p in params.items():
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded)) + encoded
        body += struct.pack("<I", p.data.ndim)
        for dim in p.data.shape:
            body += struct.pack("<I", dim)
    for p in params.values():
        body += p.data.astype("<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(body)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> float array; raises
    IntegrityError on a bad magic line, truncation or CRC mismatch."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise IntegrityError(f"checkpoint {path} is truncated")
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise IntegrityError(f"checkpoint {path} has a bad header")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"checkpoint {path} failed its integrity check")
    off = len(CHECKPOINT_MAGIC)

    def read_u32() -> int:
        nonlocal off
        if off + 4 > len(blob) - 4:
            raise IntegrityError(f"checkpoint {path} is truncated")
        val = struct.unpack_from("<I", blob, off)[0]
        off += 4
        return val

    count = read_u32()
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        name_len = read_u32()
        if off + name_len > len(blob) - 4:
            raise IntegrityError(f"checkpoint {path} is truncated")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        rank = read_u32()
        shape = tuple(read_u32() for _ in range(rank))
        manifest.append((name, shape))
    out: dict[str, np.ndarray] = {}
    for name, shape in manifest:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = off + 4 * size
        if end > len(blob) - 4:
            raise IntegrityError(f"checkpoint {path} is truncated")
        out[name] = (
            np.frombuffer(blob[off:end], dtype="<f4").astype(np.float64).reshape(shape)
        )
        off = end
    if off != len(blob) - 4:
        raise IntegrityError(f"checkpoint {path} has trailing bytes")
    return out


def apply_checkpoint(model: D2NNModel, path: str) -> None:
    """Load saved values into a model built with the same config/variant."""
    values = load_checkpoint(path)
    params = model.named_parameters()
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise IntegrityError(
            f"checkpoint {path} does not match the model "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, p in params.items():
        if values[name].shape != p.data.shape:
            raise IntegrityError(
                f"checkpoint {path}: parameter {name!r} has shape "
                f"{values[name].shape}, expected {p.data.shape}"
            )
        p.data[...] = values[name]
