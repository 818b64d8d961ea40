"""Description in, full CVSS vector and score out.

One shared tokenization feeds the eight per-metric classifiers; their
outputs are concatenated into a vector and scored.
"""

import asyncio
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from .cvss import METRIC_ORDER, CvssVector, base_score, format_vector, round_half_up
from .errors import CorruptCheckpoint, MissingCheckpoint, VocabMismatch
from .model import EncoderClassifier, load_checkpoint, predict_sequences
from .models import MetricPrediction, PredictionResult, SaliencyReport
from .saliency import DEFAULT_K, gradient_x_input, top_k_tokens
from .tokenizer import DEFAULT_SEQ_LEN, TokenSequence, Vocabulary, tokenize
from .utils import text_digest


logger = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".ckpt"


class Classifier(Protocol):
    vocab_digest: Optional[str]

    def predict(self, seq: TokenSequence) -> Tuple[int, float]:
        ...


def checkpoint_path(directory: Union[str, Path], metric: str) -> Path:
    return Path(directory) / f"{metric}{CHECKPOINT_SUFFIX}"


def load_classifiers(
    directory: Union[str, Path],
    metrics: Iterable[str] = METRIC_ORDER,
) -> Dict[str, EncoderClassifier]:
    """Load <directory>/<METRIC>.ckpt for each metric."""
    classifiers = {}
    for metric in metrics:
        path = checkpoint_path(directory, metric)
        if not path.exists():
            raise MissingCheckpoint(metric, str(path))
        model = EncoderClassifier.from_checkpoint(load_checkpoint(path))
        if model.metric != metric:
            raise CorruptCheckpoint(str(path), f"holds a {model.metric} classifier, not {metric}")
        classifiers[metric] = model
    return classifiers


def check_classifiers(
    classifiers: Mapping[str, Classifier],
    vocab: Optional[Vocabulary] = None,
    metrics: Iterable[str] = METRIC_ORDER,
) -> Optional[str]:
    """Return the vocabulary digest shared by all classifiers.

    Classifiers trained on different vocabularies cannot share one
    tokenization and raise VocabMismatch; a shared digest that differs from
    the supplied vocabulary is only logged.
    """
    for metric in metrics:
        if metric not in classifiers:
            raise MissingCheckpoint(metric)
    digests = {
        metric: classifiers[metric].vocab_digest
        for metric in metrics
        if getattr(classifiers[metric], "vocab_digest", None)
    }
    distinct = sorted(set(digests.values()))
    if len(distinct) > 1:
        detail = ", ".join(f"{m}={d[:12]}" for m, d in digests.items())
        raise VocabMismatch(f"Classifiers were trained with different vocabularies: {detail}")
    shared = distinct[0] if distinct else None
    if vocab is not None and shared is not None and shared != vocab.digest:
        logger.warning(
            "VocabMismatch: classifiers were trained with vocabulary %s, not %s",
            shared[:12], vocab.digest[:12],
        )
    return shared


def classifier_seq_len(classifiers: Mapping[str, Classifier]) -> int:
    for classifier in classifiers.values():
        config = getattr(classifier, "config", None)
        if config is not None:
            return config.seq_len
    return DEFAULT_SEQ_LEN


def _collect(outputs: Sequence[Tuple[int, float]]) -> Dict[str, MetricPrediction]:
    return {
        metric: MetricPrediction(metric, index, confidence)
        for metric, (index, confidence) in zip(METRIC_ORDER, outputs)
    }


async def _predict_all(
    classifiers: Mapping[str, Classifier], seq: TokenSequence
) -> Dict[str, MetricPrediction]:
    # Loaded models are read-only here, so the eight forward passes can
    # share the sequence from worker threads
    outputs = await asyncio.gather(
        *(asyncio.to_thread(classifiers[metric].predict, seq) for metric in METRIC_ORDER)
    )
    return _collect(outputs)


def assemble_vector(predictions: Mapping[str, MetricPrediction]) -> CvssVector:
    return CvssVector(*(predictions[metric].value for metric in METRIC_ORDER))


def predict_full(
    description: str,
    classifiers: Mapping[str, Classifier],
    vocab: Vocabulary,
    seq_len: Optional[int] = None,
    cve_id: Optional[str] = None,
    explain_metrics: Sequence[str] = (),
    k: int = DEFAULT_K,
) -> PredictionResult:
    """Predict the full vector, score and rating of one description.

    Runs the eight classifiers one after another, so it is safe to call
    from inside a running event loop. predict_full_async runs them
    concurrently.
    """
    check_classifiers(classifiers, vocab)
    seq = tokenize(description, vocab, seq_len or classifier_seq_len(classifiers))
    predictions = _collect([classifiers[metric].predict(seq) for metric in METRIC_ORDER])
    return _build_result(description, seq, predictions, classifiers, cve_id, explain_metrics, k)


async def predict_full_async(
    description: str,
    classifiers: Mapping[str, Classifier],
    vocab: Vocabulary,
    seq_len: Optional[int] = None,
    cve_id: Optional[str] = None,
    explain_metrics: Sequence[str] = (),
    k: int = DEFAULT_K,
) -> PredictionResult:
    check_classifiers(classifiers, vocab)
    seq = tokenize(description, vocab, seq_len or classifier_seq_len(classifiers))
    predictions = await _predict_all(classifiers, seq)
    return _build_result(description, seq, predictions, classifiers, cve_id, explain_metrics, k)


def _build_result(
    description: str,
    seq: TokenSequence,
    predictions: Dict[str, MetricPrediction],
    classifiers: Mapping[str, Classifier],
    cve_id: Optional[str],
    explain_metrics: Sequence[str],
    k: int,
) -> PredictionResult:
    vector = assemble_vector(predictions)
    severity = base_score(vector)
    low_information = not seq.content_positions
    if low_information:
        logger.warning("description has no content tokens; prediction rests on [CLS] and [SEP] only")

    saliency: Dict[str, SaliencyReport] = {}
    for metric in explain_metrics:
        report = gradient_x_input(seq, classifiers[metric], metric=metric, cve_id=cve_id)
        top_k_tokens(report, k)
        saliency[metric] = report

    result = PredictionResult(
        description_digest=text_digest(description),
        predictions=predictions,
        vector=format_vector(vector, with_prefix=True),
        score=severity.score,
        rating=severity.rating.value,
        impact_subscore=round_half_up(severity.impact),
        exploitability_subscore=round_half_up(severity.exploitability),
        low_information=low_information,
        saliency=saliency,
        cve_id=cve_id,
    )
    result.check_consistency()
    return result


def predict_many(
    descriptions: Sequence[str],
    classifiers: Mapping[str, Classifier],
    vocab: Vocabulary,
    seq_len: Optional[int] = None,
) -> List[Dict[str, MetricPrediction]]:
    """Per-metric predictions for many descriptions, batched per classifier."""
    check_classifiers(classifiers, vocab)
    length = seq_len or classifier_seq_len(classifiers)
    sequences = [tokenize(text, vocab, length) for text in descriptions]
    per_metric = {m: predict_sequences(classifiers[m], sequences) for m in METRIC_ORDER}
    return [
        {m: MetricPrediction(m, *per_metric[m][row]) for m in METRIC_ORDER}
        for row in range(len(sequences))
    ]
