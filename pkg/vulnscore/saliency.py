"""Gradient x Input token importances and per-class token associations.

The importance of token i for a prediction of class c is the L2 norm of
the elementwise product between the gradient of the class-c logit with
respect to the token's input embedding and that embedding.
"""

import logging
from collections import Counter
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cvss import METRICS
from .errors import EmptyFilteredSet
from .ingest import VulnRecord
from .model import predict_from_logits, predict_sequences
from .models import ClassAssociationTable, MetricPrediction, SaliencyReport
from .numerics import ComputationTape, Tensor, slice_
from .tokenizer import DEFAULT_SEQ_LEN, TokenSequence, Vocabulary, detokenize_span, tokenize


logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_THRESHOLD = 0.9
TOP_UNIGRAMS = 10
TOP_BIGRAMS = 5


def gradient_x_input(
    seq: TokenSequence,
    model: Any,
    target: Optional[int] = None,
    metric: Optional[str] = None,
    cve_id: Optional[str] = None,
) -> SaliencyReport:
    """Score every real, non-special token of seq for one class.

    The model must expose embed_tokens(ids) and
    forward_from_embeddings(embeddings, mask). Runs without dropout. When
    target is None the predicted class is explained.
    """
    metric = metric or getattr(model, "metric", None)
    ids = np.array([seq.ids], dtype=np.int64)
    mask = np.array([seq.mask], dtype=np.int64)

    # A fresh leaf so gradients stop at the embeddings and never reach
    # the model's own parameter buffers
    embeddings = Tensor(model.embed_tokens(ids).data, requires_grad=True, name="token_embeddings")
    with ComputationTape() as tape:
        logits, _ = model.forward_from_embeddings(embeddings, mask)
        index, confidence = predict_from_logits(logits.data[0])
        if target is None:
            target = index
        logit = slice_(logits, (0, target))
    tape.backward(logit, wrt=[embeddings])

    contributions = embeddings.grad[0] * embeddings.data[0]
    norms = np.linalg.norm(contributions, axis=-1)
    positions = seq.content_positions
    probability = confidence if target == index else _probability(logits.data[0], target)
    return SaliencyReport(
        metric=metric,
        prediction=MetricPrediction(metric, target, probability),
        positions=positions,
        scores=[float(norms[pos]) for pos in positions],
        seq=seq,
        cve_id=cve_id,
    )


def _probability(logits: np.ndarray, target: int) -> float:
    shifted = np.exp(logits - logits.max())
    return float(shifted[target] / shifted.sum())


def top_k_tokens(report: SaliencyReport, k: int = DEFAULT_K) -> List[Dict[str, Any]]:
    """Rank tokens by importance, earlier position first on ties.

    Each entry names the token and the whole word it belongs to, so a
    highly ranked "##" piece surfaces its merged word.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(zip(report.positions, report.scores), key=lambda item: (-item[1], item[0]))
    entries = []
    for rank, (position, score) in enumerate(ranked[:k], start=1):
        start, end = report.seq.word_bounds(position)
        entries.append({
            "rank": rank,
            "position": position,
            "token": report.seq.surfaces[position],
            "word": detokenize_span(report.seq, start, end),
            "word_span": [start, end],
            "score": score,
        })
    report.top_k = entries
    return entries


def top_k_bigrams(entries: Sequence[Dict[str, Any]]) -> List[str]:
    """Adjacent top-k positions, rendered as "word word".

    Adjacent pieces of one word are not a bigram. Each adjacent pair counts
    once, so a phrase repeated in a description counts every time.
    """
    by_position = {entry["position"]: entry for entry in entries}
    bigrams = []
    for position in sorted(by_position):
        left = by_position[position]
        right = by_position.get(position + 1)
        if right is None or left["word_span"] == right["word_span"]:
            continue
        bigrams.append(f"{left['word']} {right['word']}")
    return bigrams


def _ranked(counter: Counter, limit: int) -> List[List[Any]]:
    ordered = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return [[token, count] for token, count in ordered[:limit]]


def aggregate_associations(
    model: Any,
    records: Sequence[VulnRecord],
    vocab: Vocabulary,
    metric: Optional[str] = None,
    threshold: float = DEFAULT_THRESHOLD,
    k: int = DEFAULT_K,
    seq_len: Optional[int] = None,
    manifest_digest: Optional[str] = None,
) -> ClassAssociationTable:
    """Count the words most often among the top-k tokens of confident predictions.

    Only records whose predicted-class probability exceeds threshold take
    part. A class with no such record gets an error entry instead of counts.
    """
    metric = metric or model.metric
    values = list(METRICS[metric])
    if seq_len is None:
        seq_len = getattr(getattr(model, "config", None), "seq_len", DEFAULT_SEQ_LEN)

    sequences = [tokenize(r.description, vocab, seq_len) for r in records]
    predictions = predict_sequences(model, sequences)

    unigrams: Dict[str, Counter] = {v.code: Counter() for v in values}
    bigrams: Dict[str, Counter] = {v.code: Counter() for v in values}
    filtered: Counter = Counter()
    for record, seq, (_, confidence) in zip(records, sequences, predictions):
        if confidence <= threshold:
            continue
        report = gradient_x_input(seq, model, metric=metric, cve_id=record.cve_id)
        if report.prediction.confidence <= threshold:
            continue
        code = report.prediction.code
        entries = top_k_tokens(report, k)
        filtered[code] += 1
        unigrams[code].update(entry["word"] for entry in entries)
        bigrams[code].update(top_k_bigrams(entries))

    classes: Dict[str, Dict[str, Any]] = {}
    for value in values:
        block: Dict[str, Any] = {
            "label": value.label,
            "filtered_count": filtered[value.code],
            "unigrams": _ranked(unigrams[value.code], TOP_UNIGRAMS),
            "bigrams": _ranked(bigrams[value.code], TOP_BIGRAMS),
            "error": None,
        }
        if not filtered[value.code]:
            error = EmptyFilteredSet(value.code, threshold)
            logger.warning("%s %s: %s", metric, value.code, error)
            block["error"] = str(error)
        classes[value.code] = block

    logger.info(
        "aggregated %s associations over %d of %d records",
        metric, sum(filtered.values()), len(records),
    )
    return ClassAssociationTable(metric, threshold, k, classes, manifest_digest)


def explain(
    text: str,
    model: Any,
    vocab: Vocabulary,
    k: int = DEFAULT_K,
    seq_len: Optional[int] = None,
    cve_id: Optional[str] = None,
) -> Tuple[SaliencyReport, List[Dict[str, Any]]]:
    """Tokenize text, explain the model's prediction and rank the top k tokens."""
    if seq_len is None:
        seq_len = getattr(getattr(model, "config", None), "seq_len", DEFAULT_SEQ_LEN)
    seq = tokenize(text, vocab, seq_len)
    report = gradient_x_input(seq, model, cve_id=cve_id)
    return report, top_k_tokens(report, k)
