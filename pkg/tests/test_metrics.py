"""Tests for classification and score-level evaluation."""

import numpy as np
import pytest

from vulnscore.cvss import METRIC_ORDER, METRICS, parse_vector
from vulnscore.errors import DataError, EmptyCorpus, LengthMismatch, MissingCheckpoint, VocabMismatch
from vulnscore.ingest import VulnRecord, load_feed, normalize, split
from vulnscore.metrics import classification_metrics, evaluate, score_error_metrics
from vulnscore.tokenizer import build_vocab
from vulnscore.training import TrainConfig, project_labels, train_metric


class FixedClassifier:
    """Predicts the same class for every description."""

    def __init__(self, index, vocab_digest=None):
        self.index = index
        self.vocab_digest = vocab_digest

    def predict(self, seq):
        return self.index, 0.75


def _classifiers(vector, vocab_digest=None):
    parsed = parse_vector(vector)
    return {
        metric: FixedClassifier(parsed.get(metric).index, vocab_digest)
        for metric in METRIC_ORDER
    }


class TestClassificationMetrics:
    """Tests for per-metric classification scores."""

    def test_small_example(self):
        result = classification_metrics([0, 0, 1], [0, 1, 1], num_classes=2)
        assert result["accuracy"] == pytest.approx(2 / 3)
        assert result["f1"] == pytest.approx(2 / 3)
        assert result["confusion"] == [[1, 1], [0, 1]]
        assert result["support"] == [2, 1]
        assert result["majority_baseline"] == pytest.approx(2 / 3)

    def test_macro_f1_and_majority_baseline(self):
        result = classification_metrics([0, 0, 1], [0, 1, 1], num_classes=2)
        assert result["macro_f1"] == pytest.approx(2 / 3)
        # always answering class 0: f1 0.8 for class 0, 0 for class 1
        assert result["baseline"] == {"accuracy": pytest.approx(2 / 3), "macro_f1": pytest.approx(0.4)}

    def test_weighted_precision_and_recall(self):
        result = classification_metrics([0, 0, 1], [0, 1, 1], num_classes=2)
        # class 0: precision 1, recall 1/2; class 1: precision 1/2, recall 1
        assert result["precision"] == pytest.approx(2 / 3 * 1 + 1 / 3 * 0.5)
        assert result["recall"] == pytest.approx(2 / 3 * 0.5 + 1 / 3 * 1)

    def test_absent_class_counts_as_zero(self):
        result = classification_metrics([0, 0], [0, 2], num_classes=3)
        assert result["per_class"]["precision"][2] == 0.0
        assert result["per_class"]["recall"][1] == 0.0
        assert result["accuracy"] == 0.5

    def test_perfect(self):
        result = classification_metrics([0, 1, 2, 3], [0, 1, 2, 3], num_classes=4)
        assert result["accuracy"] == result["precision"] == result["recall"] == result["f1"] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            classification_metrics([0, 1], [0], num_classes=2)

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            classification_metrics([], [], num_classes=2)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            classification_metrics([0, 2], [0, 1], num_classes=2)


class TestScoreErrorMetrics:
    """Tests for score-level errors."""

    def test_mixed_errors(self):
        # Predicted scores 9.8, 9.8, 9.8, 9.8 against 9.8, 9.3, 8.8, 7.8
        vectors = [parse_vector("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H")] * 4
        result = score_error_metrics(vectors, [9.8, 9.3, 8.8, 7.8])
        assert result["count"] == 4
        assert result["mae"] == pytest.approx(0.875)
        assert result["mse"] == pytest.approx(1.3125)
        assert result["exact_match_fraction"] == 0.25
        assert result["mae_lt1_fraction"] == 0.5
        assert result["rating_match_fraction"] == 0.5

    def test_single_error_of_one_point(self):
        vectors = [parse_vector("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H")]
        result = score_error_metrics(vectors, [8.8])
        assert (result["mae"], result["mse"]) == (1.0, 1.0)
        assert (result["exact_match_fraction"], result["mae_lt1_fraction"]) == (0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            score_error_metrics([], [1.0])

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            score_error_metrics([], [])


class TestEvaluate:
    """Tests for end-to-end evaluation with fixed classifiers."""

    def setup_method(self):
        self.records = [
            VulnRecord("CVE-2019-0001", "remote code execution",
                       parse_vector("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H"), 9.8, 2019),
            VulnRecord("CVE-2019-0002", "usb kernel panic",
                       parse_vector("AV:P/AC:L/PR:N/UI:N/S:U/C:N/I:N/A:H"), 4.6, 2019),
        ]

    def test_fixed_predictions(self, vocab):
        classifiers = _classifiers("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H", vocab.digest)
        report = evaluate(classifiers, self.records, vocab, seq_len=16, manifest_digest="m1")
        assert report.test_size == 2
        assert report.accuracy("AV") == 0.5
        assert report.accuracy("AC") == 1.0
        assert report.beats_baseline("AC")
        assert report.score["exact_match_fraction"] == 0.5
        assert report.to_dict()["manifest_digest"] == "m1"
        assert report.vocab_digest == vocab.digest
        assert set(report.metrics) == set(METRIC_ORDER)

    def test_missing_classifier(self, vocab):
        classifiers = _classifiers("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H")
        del classifiers["UI"]
        with pytest.raises(MissingCheckpoint) as excinfo:
            evaluate(classifiers, self.records, vocab, seq_len=16)
        assert excinfo.value.metric == "UI"

    def test_classifiers_from_different_vocabularies(self, vocab):
        classifiers = _classifiers("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H", "one")
        classifiers["A"].vocab_digest = "two"
        with pytest.raises(VocabMismatch):
            evaluate(classifiers, self.records, vocab, seq_len=16)

    def test_empty_test_split(self, vocab):
        with pytest.raises(EmptyCorpus):
            evaluate(_classifiers("AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H"), [], vocab, seq_len=16)


class TestGeneratedFeed:
    """Evaluation on a few hundred generated feed records."""

    def setup_method(self):
        self.split = None

    def _prepare(self, feed_path):
        records = normalize(load_feed(feed_path))
        assert len(records) == 400
        self.split = split(records, seed=0, fraction=0.5)
        return build_vocab([r.description for r in self.split.train], max_size=500)

    def _majority_classifiers(self, vocab):
        classifiers = {}
        for metric in METRIC_ORDER:
            labels = project_labels(self.split.test, metric)
            index = int(np.bincount(labels, minlength=len(METRICS[metric])).argmax())
            classifiers[metric] = FixedClassifier(index, vocab.digest)
        return classifiers

    def test_majority_predictor_matches_its_baseline(self, generated_feed):
        vocab = self._prepare(generated_feed)
        report = evaluate(self._majority_classifiers(vocab), self.split.test, vocab, seq_len=48)
        assert report.test_size == 200
        for metric in METRIC_ORDER:
            block = report.metrics[metric]
            assert block["accuracy"] == block["baseline"]["accuracy"] == block["majority_baseline"]
            assert block["macro_f1"] == block["baseline"]["macro_f1"]
            assert block["macro_f1"] < 0.5
            assert not report.beats_baseline(metric, margin=0.01)
        payload = report.to_dict()
        assert set(payload["metrics"]["AV"]["baseline"]) == {"accuracy", "macro_f1"}

    def test_trained_attack_vector_beats_the_baseline(self, generated_feed):
        vocab = self._prepare(generated_feed)
        config = TrainConfig(
            metric="AV", preset="tiny", epochs_frozen=0, epochs_joint=10, batch_size=16,
            learning_rate=3e-3, seq_len=48, dropout_rate=0.0,
        )
        classifiers = self._majority_classifiers(vocab)
        classifiers["AV"] = train_metric(config, self.split, vocab).model

        report = evaluate(classifiers, self.split.test, vocab)
        block = report.metrics["AV"]
        assert report.beats_baseline("AV", margin=0.03)
        assert block["macro_f1"] > block["baseline"]["macro_f1"]
