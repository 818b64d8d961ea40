"""Evaluation of per-metric classifiers and of the scores they imply."""

import logging
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_recall_fscore_support

from .cvss import METRIC_ORDER, METRICS, CvssVector, base_score, severity_rating
from .errors import DataError, EmptyCorpus, LengthMismatch
from .ingest import VulnRecord
from .models import EvalReport
from .pipeline import Classifier, assemble_vector, check_classifiers, predict_many
from .tokenizer import Vocabulary
from .training import project_labels


logger = logging.getLogger(__name__)


def classification_metrics(
    y_true: Sequence[int], y_pred: Sequence[int], num_classes: int
) -> Dict[str, Any]:
    """Accuracy, support-weighted and macro F1, precision/recall and the confusion matrix.

    The baseline block scores a predictor that always answers the most
    frequent true class (lowest index on ties).

    Precision or recall of a class with a zero denominator counts as 0.
    """
    if len(y_true) != len(y_pred):
        raise LengthMismatch(len(y_true), len(y_pred))
    if not len(y_true):
        raise EmptyCorpus("evaluation set")
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    for name, values in (("y_true", y_true), ("y_pred", y_pred)):
        if values.min() < 0 or values.max() >= num_classes:
            raise DataError(f"{name} holds labels outside [0, {num_classes})")

    labels = list(range(num_classes))
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average=None, zero_division=0
    )
    total = int(support.sum())
    weights = support / total
    majority = np.full_like(y_true, int(np.argmax(support)))
    return {
        "accuracy": float(accuracy_score(y_true, y_pred)),
        "precision": float(np.dot(weights, precision)),
        "recall": float(np.dot(weights, recall)),
        "f1": float(np.dot(weights, f1)),
        "macro_f1": float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        "confusion": confusion_matrix(y_true, y_pred, labels=labels).tolist(),
        "support": [int(s) for s in support],
        "majority_baseline": float(support.max() / total),
        "baseline": {
            "accuracy": float(accuracy_score(y_true, majority)),
            "macro_f1": float(f1_score(y_true, majority, labels=labels, average="macro", zero_division=0)),
        },
        "per_class": {
            "precision": [float(p) for p in precision],
            "recall": [float(r) for r in recall],
            "f1": [float(f) for f in f1],
        },
    }


def score_error_metrics(
    predicted: Sequence[CvssVector], true_scores: Sequence[float]
) -> Dict[str, Any]:
    """Error of the scores implied by predicted vectors against true scores.

    Scores are compared in integer tenths, so "exact" means equal at one
    decimal, the precision scores are published with.
    """
    if len(predicted) != len(true_scores):
        raise LengthMismatch(len(predicted), len(true_scores))
    if not len(predicted):
        raise EmptyCorpus("evaluation set")

    severities = [base_score(vector) for vector in predicted]
    got = np.array([s.tenths for s in severities], dtype=np.int64)
    want = np.array([round(float(s) * 10) for s in true_scores], dtype=np.int64)
    diff = got - want
    rating_matches = [
        s.rating == severity_rating(w / 10) for s, w in zip(severities, want)
    ]
    return {
        "count": len(diff),
        "mse": float(np.mean(diff * diff)) / 100.0,
        "mae": float(np.mean(np.abs(diff))) / 10.0,
        "exact_match_fraction": float(np.mean(diff == 0)),
        "mae_lt1_fraction": float(np.mean(np.abs(diff) < 10)),
        "rating_match_fraction": float(np.mean(rating_matches)),
    }


def evaluate(
    classifiers: Mapping[str, Classifier],
    records: Sequence[VulnRecord],
    vocab: Vocabulary,
    seq_len: Optional[int] = None,
    manifest_digest: Optional[str] = None,
) -> EvalReport:
    """Run all eight classifiers over the test records and score the results."""
    vocab_digest = check_classifiers(classifiers, vocab)
    if not records:
        raise EmptyCorpus("test split")

    rows = predict_many([r.description for r in records], classifiers, vocab, seq_len)
    blocks = {}
    for metric in METRIC_ORDER:
        y_true = project_labels(records, metric)
        y_pred = [row[metric].index for row in rows]
        blocks[metric] = classification_metrics(y_true, y_pred, len(METRICS[metric]))
        logger.info("%s accuracy %.4f", metric, blocks[metric]["accuracy"])

    vectors = [assemble_vector(row) for row in rows]
    score = score_error_metrics(vectors, [r.base_score for r in records])
    logger.info("score mae %.3f, exact %.3f", score["mae"], score["exact_match_fraction"])
    return EvalReport(blocks, score, len(records), vocab_digest, manifest_digest)
