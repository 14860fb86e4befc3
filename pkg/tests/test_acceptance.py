"""Acceptance suite.

Eight checks: a published-table arithmetic reproduction, end-to-end
gradient fidelity, metric oracle equivalence, attention normalization,
synthetic learnability, an ablation direction check, determinism and
checkpoint persistence, and the negative-sampling contract.
"""

import numpy as np
import pytest

from d2nn.autograd import Tensor
from d2nn.config import DataConfig, RunConfig
from d2nn.data import SyntheticConfig, generate_synthetic, split_click_events
from d2nn.metrics import (
    auc,
    div_at_k,
    evaluate_model,
    ndcg_at_k,
    rmse,
    tradeoff,
)
from d2nn.model import assemble_batch, forward_batch
from d2nn.news import additive_attention, self_attention_weights
from d2nn.pipeline import build_model, prepare
from d2nn.training import (
    Adam,
    build_training_samples,
    nll_loss,
    save_checkpoint,
    apply_checkpoint,
    train_epoch,
)

# =========================================================================
# 1. Tradeoff-formula reproduction on the published comparison table
# =========================================================================

# Published per-model rows: NDCG@{5,10,20,50}, DIV@{5,10,20,50}, printed
# tradeoff. Model order: DKN, LSTUR, LSTUR-ini, DMF, CDAE, GRU4Rec+,
# SASRec, SRGNN, BERT4Rec, D2NN.
NYTIMES_TABLE = {
    "DKN": ([0.278, 0.297, 0.310, 0.439], [0.513, 0.495, 0.490, 0.428], 0.392),
    "LSTUR": ([0.150, 0.212, 0.307, 0.333], [0.493, 0.536, 0.605, 0.638], 0.348),
    "LSTUR-ini": ([0.180, 0.222, 0.307, 0.300], [0.683, 0.726, 0.795, 0.828], 0.379),
    "DMF": ([0.255, 0.247, 0.270, 0.339], [0.368, 0.383, 0.423, 0.485], 0.333),
    "CDAE": ([0.199, 0.204, 0.288, 0.299], [0.522, 0.302, 0.301, 0.313], 0.279),
    "GRU4Rec+": ([0.045, 0.047, 0.055, 0.081], [0.858, 0.836, 0.831, 0.838], 0.107),
    "SASRec": ([0.127, 0.138, 0.156, 0.212], [0.641, 0.620, 0.628, 0.668], 0.254),
    "SRGNN": ([0.141, 0.140, 0.157, 0.197], [0.599, 0.585, 0.603, 0.647], 0.252),
    "BERT4Rec": ([0.079, 0.098, 0.123, 0.167], [0.163, 0.235, 0.346, 0.415], 0.166),
    "D2NN": ([0.387, 0.449, 0.511, 0.567], [0.488, 0.526, 0.605, 0.670], 0.521),
}
MIND_TABLE = {
    "DKN": ([0.335, 0.323, 0.340, 0.379], [0.528, 0.512, 0.409, 0.428], 0.397),
    "LSTUR": ([0.233, 0.297, 0.349, 0.391], [0.328, 0.412, 0.425, 0.425], 0.353),
    "LSTUR-ini": ([0.229, 0.291, 0.341, 0.387], [0.401, 0.408, 0.411, 0.580], 0.357),
    "DMF": ([0.187, 0.203, 0.249, 0.262], [0.342, 0.298, 0.312, 0.372], 0.268),
    "CDAE": ([0.220, 0.215, 0.213, 0.240], [0.391, 0.411, 0.417, 0.420], 0.288),
    "GRU4Rec+": ([0.044, 0.071, 0.106, 0.110], [0.818, 0.806, 0.806, 0.814], 0.150),
    "SASRec": ([0.205, 0.196, 0.196, 0.224], [0.604, 0.605, 0.608, 0.615], 0.307),
    "SRGNN": ([0.125, 0.126, 0.142, 0.184], [0.714, 0.715, 0.720, 0.731], 0.240),
    "BERT4Rec": ([0.074, 0.109, 0.222, 0.267], [0.101, 0.484, 0.409, 0.420], 0.228),
    "D2NN": ([0.237, 0.322, 0.368, 0.427], [0.447, 0.488, 0.481, 0.485], 0.403),
}
# Columns whose printed tradeoff disagrees with the recomputed harmonic
# mean, with the recomputed value (known table inconsistencies).
KNOWN_MISMATCHES = {
    ("NYTimes", "CDAE"): 0.293,
    ("MIND", "LSTUR-ini"): 0.369,
    ("MIND", "D2NN"): 0.395,
}


def test_tradeoff_reproduction_on_published_table():
    matches = 0
    mismatches = {}
    for dataset, table in (("NYTimes", NYTIMES_TABLE), ("MIND", MIND_TABLE)):
        for model, (ndcg, div, printed) in table.items():
            recomputed = tradeoff(float(np.mean(ndcg)), float(np.mean(div)))
            if abs(recomputed - printed) <= 0.005:
                matches += 1
            else:
                mismatches[(dataset, model)] = round(recomputed, 3)
    assert matches >= 17, f"only {matches}/20 columns match; off: {mismatches}"
    # the three disagreeing columns are the known ones, at the known values
    assert set(mismatches) == set(KNOWN_MISMATCHES)
    for key, value in KNOWN_MISMATCHES.items():
        assert mismatches[key] == pytest.approx(value, abs=0.005)


# =========================================================================
# 2. End-to-end gradient fidelity
# =========================================================================


def _toy_setup(seed):
    cfg = RunConfig(
        data=DataConfig(
            synthetic=SyntheticConfig(
                news_count=30,
                reader_count=6,
                sessions_per_reader=2,
                session_length=3,
                candidates_per_impression=6,
            ),
            min_count=1,
        )
    )
    cfg.model.embed_dim = 8
    cfg.model.conv_filters = 6
    cfg.model.attn_hidden = 5
    cfg.model.max_headline = 4
    cfg.model.max_snippet = 6
    cfg.model.recent_window = 3
    cfg.model.dropout = 0.0
    prep = prepare(cfg, seed)
    model = build_model(cfg, prep, seed)
    rng = np.random.default_rng(seed)
    samples = [
        (tuple(rng.integers(0, 30, size=4)), int(rng.integers(30)), 1),
        (tuple(rng.integers(0, 30, size=2)), int(rng.integers(30)), 0),
    ]
    batch = assemble_batch(samples, cfg.model.long_term_cap, cfg.model.recent_window)
    return model, prep.news_idx, batch


def test_end_to_end_gradient_fidelity():
    """Finite differences through the whole scoring graph on a toy model:
    2 samples, >= 200 randomly chosen parameter components over 10 seeds."""
    eps = 1e-5
    checked = 0
    worst = 0.0
    for seed in range(10):
        model, news_idx, batch = _toy_setup(seed)
        params = model.named_parameters()

        def loss_value():
            return nll_loss(forward_batch(model, news_idx, batch), batch.labels)

        model.zero_grad()
        loss_value().backward()
        grads = {n: p.grad.copy() for n, p in params.items()}

        rng = np.random.default_rng(1000 + seed)
        names = sorted(params)
        for _ in range(21):
            name = names[int(rng.integers(len(names)))]
            flat = params[name].data.reshape(-1)
            i = int(rng.integers(flat.size))
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_value().item()
            flat[i] = orig - eps
            lo = loss_value().item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * eps)
            analytic = grads[name].reshape(-1)[i]
            # the 1e-6 floor keeps central-difference roundoff noise
            # (~5e-12 absolute at this eps) from dominating components
            # whose true gradient is itself at the noise floor
            rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-6)
            worst = max(worst, rel)
            checked += 1
    assert checked >= 200
    assert worst < 1e-3, f"worst relative gradient error {worst}"


# =========================================================================
# 3. Metric oracle equivalence on all short lists
# =========================================================================


def test_metric_oracles_exhaustive():
    import itertools

    rng = np.random.default_rng(0)
    for n in range(2, 9):
        scores = rng.integers(0, 3, size=n).astype(float)  # force ties
        feats = rng.normal(size=(n, 3))
        for labels in itertools.product([0, 1], repeat=n):
            labels = list(labels)
            # RMSE
            probs = rng.random(n)
            want = np.sqrt(np.mean((np.array(labels) - probs) ** 2))
            assert rmse(labels, probs) == pytest.approx(want, abs=1e-12)
            # AUC (both classes present)
            if 0 < sum(labels) < n:
                pos = [s for y, s in zip(labels, scores) if y]
                neg = [s for y, s in zip(labels, scores) if not y]
                wins = sum(
                    1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg
                )
                assert auc(labels, scores) == pytest.approx(
                    wins / (len(pos) * len(neg)), abs=1e-12
                )
            for k in (1, 3, 8):
                order = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
                npos = sum(labels)
                dcg = sum(labels[i] / np.log2(r + 2) for r, i in enumerate(order))
                idcg = sum(1.0 / np.log2(r + 2) for r in range(min(npos, len(order))))
                want = dcg / idcg if npos else 0.0
                assert ndcg_at_k(labels, scores, k) == pytest.approx(want, abs=1e-12)
                got = div_at_k(feats, scores, k)
                if len(order) < 2:
                    assert got is None
                else:
                    tot = 0.0
                    for a in range(len(order)):
                        for b in range(a + 1, len(order)):
                            x, y = feats[order[a]], feats[order[b]]
                            tot += 1.0 - x @ y / (np.linalg.norm(x) * np.linalg.norm(y))
                    m = len(order)
                    assert got == pytest.approx(2 * tot / (m * (m - 1)), abs=1e-12)


# =========================================================================
# 4. Attention normalization
# =========================================================================


def test_attention_normalization_thousand_instances():
    """Word, news-level, diversity and self-attention weights: nonnegative,
    sum to 1 within 1e-9, PAD positions exactly zero. 250 instances each."""
    rng = np.random.default_rng(0)
    d, a, m = 6, 5, 9
    for _ in range(250):
        # word-level / diversity-style additive attention with a PAD mask
        values = Tensor(rng.normal(size=(m, d)))
        proj = Tensor(rng.normal(size=(a, d)))
        bias = Tensor(rng.normal(size=a))
        query = Tensor(rng.normal(size=a))
        n_real = int(rng.integers(1, m + 1))
        mask = np.zeros(m, dtype=bool)
        mask[:n_real] = True
        _, w = additive_attention(values, proj, bias, query, mask)
        assert np.all(w.data >= 0)
        assert abs(w.data.sum() - 1.0) < 1e-9
        assert np.all(w.data[~mask] == 0.0)

        # news-level attention over a handful of field vectors (no mask)
        fields = Tensor(rng.normal(size=(4, d)))
        _, wf = additive_attention(fields, proj, bias, query)
        assert np.all(wf.data >= 0) and abs(wf.data.sum() - 1.0) < 1e-9

        # diversity attention over LSTM-like hidden states
        hidden = Tensor(np.tanh(rng.normal(size=(5, d))))
        _, wd = additive_attention(hidden, proj, bias, query)
        assert np.all(wd.data >= 0) and abs(wd.data.sum() - 1.0) < 1e-9

        # every self-attention head row
        we = Tensor(rng.normal(size=(m, d)))
        q = Tensor(rng.normal(size=(2, d, d)))
        for att in self_attention_weights(we, q, mask):
            rows = att.data[mask]
            assert np.all(att.data >= 0)
            assert np.all(np.abs(rows.sum(axis=-1) - 1.0) < 1e-9)
            assert np.all(att.data[:, ~mask] == 0.0)


# =========================================================================
# 5. Synthetic learnability
# =========================================================================


def _learnability_cfg(mixing=0.7, **syn_kw):
    cfg = RunConfig(
        data=DataConfig(synthetic=SyntheticConfig(mixing_weight=mixing, **syn_kw), min_count=1)
    )
    cfg.model.embed_dim = 24
    cfg.model.conv_filters = 24
    cfg.model.attn_hidden = 24
    cfg.model.max_headline = 8
    cfg.model.max_snippet = 12
    cfg.model.recent_window = 5
    cfg.optimizer.batch_size = 128
    cfg.optimizer.learning_rate = 0.01
    cfg.optimizer.l2 = 0.0
    return cfg


def _fit(cfg, seed, variant, epochs, stop_auc=None):
    prep = prepare(cfg, seed)
    model = build_model(cfg, prep, seed, variant=variant)
    rng = np.random.default_rng(seed)
    samples = build_training_samples(prep.split.train, prep.news_idx, 5, rng)
    adam = Adam(model.named_parameters(), cfg.optimizer, model.pad_row_exempt)
    losses = []
    aucs = []
    result = None
    for _ in range(epochs):
        losses.append(train_epoch(model, prep.news_idx, samples, adam, rng))
        if stop_auc is not None:
            result = evaluate_model(model, prep.news_idx, prep.split.test, seed=seed)
            aucs.append(result.auc)
            if len(losses) >= 3 and aucs[-1] >= stop_auc:
                break
    if result is None:
        result = evaluate_model(model, prep.news_idx, prep.split.test, seed=seed)
    return model, prep, losses, aucs, result


def test_synthetic_learnability():
    """On the two-topic 200-reader/500-news dataset at mixing weight 0.7,
    the full model reaches test AUC >= 0.90 within 5 epochs with strictly
    decreasing training loss over the first 3 epochs, for >= 4 of 5 seeds."""
    passes = 0
    details = []
    for seed in range(5):
        cfg = _learnability_cfg()
        _, _, losses, aucs, _ = _fit(cfg, seed, "d2nn", epochs=5, stop_auc=0.90)
        reached = max(aucs) >= 0.90
        decreasing = len(losses) >= 3 and losses[0] > losses[1] > losses[2]
        passes += reached and decreasing
        details.append((seed, [round(a, 3) for a in aucs], [round(l, 3) for l in losses]))
    assert passes >= 4, f"only {passes}/5 seeds passed: {details}"


# =========================================================================
# 6. Ablation direction: short-term path is more diverse under drift
# =========================================================================


def test_short_term_variant_more_diverse_under_session_drift():
    """Directional check: with strong per-session drift (mixing weight 0.3)
    the short-term-only variant's median mean-DIV over 5 seeds is at least
    the long-term-only variant's, measured on topical (category) features."""
    divs = {"sti": [], "lti": []}
    for seed in range(5):
        cfg = _learnability_cfg(
            mixing=0.3, topics=6, sessions_per_reader=8, session_length=3, subtopics=3
        )
        cfg.model.recent_window = 3
        cfg.model.diversity_feature = "category"
        for variant in ("sti", "lti"):
            _, _, _, _, result = _fit(cfg, seed, variant, epochs=5)
            divs[variant].append(result.mean_div)
    assert np.median(divs["sti"]) >= np.median(divs["lti"]), divs


# =========================================================================
# 7. Determinism and persistence
# =========================================================================


def test_determinism_and_checkpoint_round_trip(tmp_path):
    cfg = RunConfig(
        data=DataConfig(
            synthetic=SyntheticConfig(
                news_count=80,
                reader_count=12,
                sessions_per_reader=3,
                session_length=3,
                candidates_per_impression=8,
            ),
            min_count=1,
        )
    )
    cfg.model.embed_dim = 10
    cfg.model.conv_filters = 8
    cfg.model.attn_hidden = 6
    cfg.model.max_headline = 5
    cfg.model.max_snippet = 8
    cfg.model.recent_window = 4
    cfg.optimizer.batch_size = 32
    cfg.optimizer.max_epochs = 2

    paths = []
    results = []
    for run in range(2):
        prep = prepare(cfg, 0)
        model = build_model(cfg, prep, 0)
        rng = np.random.default_rng(0)
        samples = build_training_samples(prep.split.train, prep.news_idx, 5, rng)
        adam = Adam(model.named_parameters(), cfg.optimizer, model.pad_row_exempt)
        for _ in range(2):
            train_epoch(model, prep.news_idx, samples, adam, rng)
        path = tmp_path / f"run{run}.ckpt"
        save_checkpoint(str(path), model.named_parameters())
        paths.append(path)
        results.append(evaluate_model(model, prep.news_idx, prep.split.test, seed=0))
    # identical config + seed => bitwise-identical checkpoints
    assert paths[0].read_bytes() == paths[1].read_bytes()

    # round trip through the float32 file moves no metric by more than 1e-5
    prep = prepare(cfg, 0)
    restored = build_model(cfg, prep, 99)  # different init, then overwritten
    apply_checkpoint(restored, str(paths[0]))
    after = evaluate_model(restored, prep.news_idx, prep.split.test, seed=0)
    before = results[0]
    assert abs(after.auc - before.auc) <= 1e-5
    assert abs(after.rmse - before.rmse) <= 1e-5
    assert abs(after.mean_ndcg - before.mean_ndcg) <= 1e-5
    assert abs(after.mean_div - before.mean_div) <= 1e-5
    assert abs(after.tradeoff - before.tradeoff) <= 1e-5


# =========================================================================
# 8. Negative-sampling contract
# =========================================================================


def test_negative_sampling_ratio_and_no_leakage():
    """Over a full synthetic epoch: exactly 5 negatives per positive, and no
    negative equals any of that reader's positives."""
    news, impressions = generate_synthetic(
        SyntheticConfig(news_count=200, reader_count=40, sessions_per_reader=4, session_length=4),
        0,
    )
    split = split_click_events(impressions)
    cfg = RunConfig(data=DataConfig(synthetic=SyntheticConfig(), min_count=1))
    cfg.model.max_headline = 8
    cfg.model.max_snippet = 12
    from d2nn.data import build_vocabulary, taxonomy_vocabulary
    from d2nn.model import index_news

    vocab = build_vocabulary(news, min_count=1)
    news_idx = index_news(
        news, vocab, taxonomy_vocabulary(news), taxonomy_vocabulary(news, subcategory=True),
        cfg.model,
    )
    samples = build_training_samples(split.train, news_idx, 5, np.random.default_rng(0))
    labels = [s.label for s in samples]
    assert labels.count(0) == 5 * labels.count(1)
    assert labels.count(1) == len(split.train)

    positives_by_reader: dict[str, set[int]] = {}
    for ev in split.train:
        positives_by_reader.setdefault(ev.reader_id, set()).add(news_idx.row[ev.news_id])
    i = 0
    for ev in split.train:
        group = samples[i : i + 6]
        i += 6
        assert group[0].label == 1
        for neg in group[1:]:
            assert neg.label == 0
            assert neg.cand_row not in positives_by_reader[ev.reader_id], (
                f"negative equals a positive of reader {ev.reader_id}"
            )
