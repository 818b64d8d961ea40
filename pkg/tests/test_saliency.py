"""Tests for Gradient x Input saliency and class associations."""

import numpy as np
import pytest

from vulnscore.cvss import parse_vector
from vulnscore.ingest import VulnRecord
from vulnscore.model import EncoderClassifier, ModelConfig, predict_from_logits
from vulnscore.numerics import Tensor, embedding_lookup, matmul, mul, reshape
from vulnscore.saliency import (
    aggregate_associations,
    explain,
    gradient_x_input,
    top_k_bigrams,
    top_k_tokens,
)
from vulnscore.tokenizer import tokenize


HIDDEN = 4


class LinearSurrogate:
    """Logits are the sum over real tokens of embedding @ weights.

    The gradient of logit c with respect to a real token's embedding is
    weights[:, c], so importances have a closed form.
    """

    metric = "AV"
    vocab_digest = None

    def __init__(self, table, weights):
        self.table = Tensor(table)
        self.weights = Tensor(weights)

    def embed_tokens(self, ids):
        return embedding_lookup(self.table, np.atleast_2d(ids))

    def forward_from_embeddings(self, embeddings, mask, rng=None):
        mask = np.atleast_2d(mask).astype(np.float64)
        batch, seq_len = mask.shape
        masked = mul(embeddings, Tensor(mask[:, :, None]))
        per_token = matmul(masked, self.weights)
        summed = matmul(Tensor(np.ones((batch, 1, seq_len))), per_token)
        return reshape(summed, (batch, self.weights.shape[1])), []

    def predict(self, seq):
        logits, _ = self.forward_from_embeddings(self.embed_tokens(np.array([seq.ids])), np.array([seq.mask]))
        return predict_from_logits(logits.data[0])


def _surrogate(vocab, boosts=None, scale=10.0, seed=0):
    """Near-zero embeddings, with chosen words pushed along chosen axes."""
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 0.01, size=(len(vocab), HIDDEN))
    for word, (axis, value) in (boosts or {}).items():
        table[vocab.id_of[word], axis] = value
    return LinearSurrogate(table, scale * np.eye(HIDDEN))


ORACLE_WORDS = [
    "buffer", "overflow", "remote", "attackers", "execute", "arbitrary", "code", "local",
    "users", "physical", "usb", "device", "kernel", "panic", "network", "crafted", "request",
]


def _logit_shift(model, seq, target, positions):
    """How far the target logit moves when the given positions are masked out."""
    ids, mask = np.array([seq.ids]), np.array([seq.mask])
    kept = mask.copy()
    kept[0, list(positions)] = 0
    full = model.forward_from_embeddings(model.embed_tokens(ids), mask)[0].data[0, target]
    masked = model.forward_from_embeddings(model.embed_tokens(ids), kept)[0].data[0, target]
    return abs(full - masked)


class TestGradientXInput:
    """Tests for per-token importances."""

    def test_closed_form_importances(self, vocab):
        rng = np.random.default_rng(1)
        model = LinearSurrogate(rng.normal(size=(len(vocab), HIDDEN)), rng.normal(size=(HIDDEN, 4)))
        seq = tokenize("remote attackers execute code", vocab, seq_len=10)
        report = gradient_x_input(seq, model, target=2)
        weights = model.weights.data[:, 2]
        for position, score in zip(report.positions, report.scores):
            expected = np.linalg.norm(weights * model.table.data[seq.ids[position]])
            assert score == pytest.approx(expected)

    def test_specials_and_padding_are_excluded(self, vocab):
        seq = tokenize("kernel panic", vocab, seq_len=10)
        report = gradient_x_input(seq, _surrogate(vocab))
        assert report.positions == [1, 2]
        assert [token for _, token, _ in report.tokens] == ["kernel", "panic"]

    def test_predicted_class_by_default(self, vocab):
        model = _surrogate(vocab, {"physical": (3, 5.0)})
        seq = tokenize("physical usb device", vocab, seq_len=10)
        report = gradient_x_input(seq, model, cve_id="CVE-2020-9804")
        assert report.prediction.code == "P"
        assert report.prediction.confidence > 0.99
        assert report.cve_id == "CVE-2020-9804"
        assert report.to_dict()["metric"] == "AV"

    def test_explicit_target(self, vocab):
        model = _surrogate(vocab, {"physical": (3, 5.0)})
        seq = tokenize("physical usb device", vocab, seq_len=10)
        report = gradient_x_input(seq, model, target=0)
        assert report.prediction.code == "N"
        assert report.prediction.confidence < 0.01

    def test_zero_head_gives_zero_importance(self, vocab):
        model = LinearSurrogate(np.ones((len(vocab), HIDDEN)), np.zeros((HIDDEN, 4)))
        seq = tokenize("remote attackers execute code", vocab, seq_len=10)
        report = gradient_x_input(seq, model)
        assert report.scores == [0.0] * 4
        entries = top_k_tokens(report, 2)
        assert [entry["position"] for entry in entries] == [1, 2]

    def test_matches_finite_differences_on_encoder(self, vocab):
        config = ModelConfig(vocab_size=len(vocab), num_classes=4, seq_len=10, hidden_dim=8,
                             num_layers=1, num_heads=2, ffn_dim=16, metric="AV", seed=3)
        model = EncoderClassifier(config)
        rng = np.random.default_rng(0)
        for tensor in model.params.values():
            tensor.data[...] += rng.normal(0.0, 0.3, size=tensor.shape)
        seq = tokenize("usb device kernel panic", vocab, seq_len=10)
        report = gradient_x_input(seq, model, target=1)

        ids, mask = np.array([seq.ids]), np.array([seq.mask])
        base = model.embed_tokens(ids).data.copy()
        eps = 1e-6
        for position in (1, 3):
            grad = np.zeros(8)
            for d in range(8):
                plus, minus = base.copy(), base.copy()
                plus[0, position, d] += eps
                minus[0, position, d] -= eps
                high = model.forward_from_embeddings(Tensor(plus), mask)[0].data[0, 1]
                low = model.forward_from_embeddings(Tensor(minus), mask)[0].data[0, 1]
                grad[d] = (high - low) / (2 * eps)
            expected = np.linalg.norm(grad * base[0, position])
            assert report.score_at(position) == pytest.approx(expected, rel=1e-5, abs=1e-9)

    def test_recomputation_is_bit_identical(self, vocab):
        config = ModelConfig(vocab_size=len(vocab), num_classes=4, seq_len=16, hidden_dim=16,
                             num_layers=2, num_heads=2, ffn_dim=32, metric="AV", seed=9)
        model = EncoderClassifier(config)
        rng = np.random.default_rng(9)
        for tensor in model.params.values():
            tensor.data[...] += rng.normal(0.0, 0.2, size=tensor.shape)
        seq = tokenize("remote attackers execute arbitrary code via crafted request", vocab, seq_len=16)

        first = gradient_x_input(seq, model, target=2)
        second = gradient_x_input(seq, model, target=2)
        assert first.scores == second.scores
        assert first.prediction.confidence == second.prediction.confidence
        assert top_k_tokens(first, 4) == top_k_tokens(second, 4)

    def test_masking_top_tokens_moves_the_logit_most(self, vocab):
        rng = np.random.default_rng(5)
        wins = 0
        for _ in range(100):
            table = rng.gamma(2.0, 1.0, size=(len(vocab), HIDDEN)) * rng.lognormal(0.0, 1.0, size=(len(vocab), 1))
            model = LinearSurrogate(table, rng.uniform(0.0, 1.0, size=(HIDDEN, 4)))
            text = " ".join(rng.choice(ORACLE_WORDS, size=int(rng.integers(6, 13))))
            seq = tokenize(text, vocab, seq_len=20)
            report = gradient_x_input(seq, model)
            target = report.prediction.index

            top = [entry["position"] for entry in top_k_tokens(report, 3)]
            chosen = rng.choice(report.positions, size=3, replace=False)
            if _logit_shift(model, seq, target, top) > _logit_shift(model, seq, target, chosen):
                wins += 1
        assert wins >= 80

    def test_model_gradients_are_untouched(self, vocab):
        config = ModelConfig(vocab_size=len(vocab), num_classes=2, seq_len=10, hidden_dim=8,
                             num_layers=1, num_heads=2, ffn_dim=16, metric="UI")
        model = EncoderClassifier(config)
        gradient_x_input(tokenize("remote code", vocab, seq_len=10), model)
        assert all(not np.any(p.grad) for p in model.params.values())


class TestTopK:
    """Tests for ranking and word merging."""

    def test_ranking_and_word_merging(self, vocab):
        model = _surrogate(vocab, {"##s": (0, 3.0), "kernel": (0, 1.0)})
        seq = tokenize("xss in kernel", vocab, seq_len=12)
        assert seq.surfaces[1:4] == ["x", "##s", "##s"]
        report = gradient_x_input(seq, model, target=0)
        entries = top_k_tokens(report, 3)
        assert [entry["position"] for entry in entries] == [2, 3, 5]
        assert entries[0]["word"] == "xss"
        assert entries[0]["word_span"] == [1, 4]
        assert entries[2]["word"] == "kernel"
        assert [entry["rank"] for entry in entries] == [1, 2, 3]
        assert report.top_k == entries

    def test_k_larger_than_sequence(self, vocab):
        report = gradient_x_input(tokenize("usb", vocab, seq_len=8), _surrogate(vocab))
        assert len(top_k_tokens(report, 5)) == 1

    def test_invalid_k(self, vocab):
        report = gradient_x_input(tokenize("usb", vocab, seq_len=8), _surrogate(vocab))
        with pytest.raises(ValueError):
            top_k_tokens(report, 0)

    def test_bigrams_skip_pieces_of_one_word(self):
        entries = [
            {"position": 1, "word": "xss", "word_span": [1, 4]},
            {"position": 2, "word": "xss", "word_span": [1, 4]},
            {"position": 4, "word": "remote", "word_span": [4, 5]},
            {"position": 5, "word": "attackers", "word_span": [5, 6]},
        ]
        assert top_k_bigrams(entries) == ["remote attackers"]


def test_explain(vocab):
    """explain tokenizes, scores and ranks in one call."""
    model = _surrogate(vocab, {"network": (0, 5.0)})
    report, entries = explain("remote network request", model, vocab, k=1, seq_len=10)
    assert report.prediction.code == "N"
    assert entries[0]["word"] == "network"


class TestAggregate:
    """Tests for per-class association tables."""

    def setup_method(self):
        network = parse_vector("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H")
        physical = parse_vector("AV:P/AC:L/PR:N/UI:N/S:U/C:N/I:N/A:H")
        self.records = [
            VulnRecord("CVE-2019-0001", "remote network request", network, 9.8, 2019),
            VulnRecord("CVE-2019-0002", "crafted remote network request", network, 9.8, 2019),
            VulnRecord("CVE-2019-0003", "remote network", network, 9.8, 2019),
            VulnRecord("CVE-2019-0004", "physical usb device", physical, 4.6, 2019),
        ]

    def _model(self, vocab):
        return _surrogate(vocab, {
            "network": (0, 5.0), "remote": (0, 2.0), "physical": (3, 5.0), "usb": (3, 2.0),
        })

    def test_counts_per_class(self, vocab):
        table = aggregate_associations(self._model(vocab), self.records, vocab, k=2, seq_len=10,
                                       manifest_digest="m")
        assert table.classes["N"]["filtered_count"] == 3
        assert table.unigrams("N")[:2] == [("network", 3), ("remote", 3)]
        assert table.bigrams("N") == [("remote network", 3)]
        assert table.unigrams("P") == [("physical", 1), ("usb", 1)]
        assert table.bigrams("P") == [("physical usb", 1)]
        assert table.empty_classes == ["A", "L"]
        assert table.to_dict()["manifest_digest"] == "m"

    def test_threshold_above_one_empties_every_class(self, vocab):
        table = aggregate_associations(self._model(vocab), self.records, vocab, threshold=1.01,
                                       k=2, seq_len=10)
        assert table.empty_classes == ["N", "A", "L", "P"]
        for block in table.classes.values():
            assert block["filtered_count"] == 0
            assert block["unigrams"] == []
            assert "No confident predictions" in block["error"]
