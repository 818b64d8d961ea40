"""Result models for predictions, evaluations and explanations."""

from typing import Any, Dict, List, Optional, Tuple

from .cvss import METRIC_NAMES, METRICS, base_score, parse_vector
from .errors import DataError
from .tokenizer import TokenSequence


class MetricPrediction:
    """One classifier's output: a metric value and its confidence."""

    def __init__(self, metric: str, index: int, confidence: float):
        self.metric = metric
        self.index = index
        self.confidence = confidence

    @property
    def value(self):
        return list(METRICS[self.metric])[self.index]

    @property
    def code(self) -> str:
        return self.value.code

    @property
    def label(self) -> str:
        return self.value.label

    def to_dict(self) -> Dict[str, Any]:
        return {
            "code": self.code,
            "label": self.label,
            "index": self.index,
            "confidence": self.confidence,
        }


class SaliencyReport:
    """Per-token Gradient x Input importances for one metric prediction."""

    def __init__(
        self,
        metric: str,
        prediction: MetricPrediction,
        positions: List[int],
        scores: List[float],
        seq: TokenSequence,
        top_k: Optional[List[Dict[str, Any]]] = None,
        cve_id: Optional[str] = None,
    ):
        self.metric = metric
        self.prediction = prediction
        self.positions = positions
        self.scores = scores
        self.seq = seq
        self.top_k = top_k or []
        self.cve_id = cve_id

    @property
    def tokens(self) -> List[Tuple[int, str, float]]:
        return [
            (pos, self.seq.surfaces[pos], score)
            for pos, score in zip(self.positions, self.scores)
        ]

    def score_at(self, position: int) -> float:
        return self.scores[self.positions.index(position)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cve_id": self.cve_id,
            "metric": self.metric,
            "metric_name": METRIC_NAMES[self.metric],
            "prediction": self.prediction.to_dict(),
            "tokens": [
                {"position": pos, "token": token, "score": score}
                for pos, token, score in self.tokens
            ],
            "top_k": self.top_k,
        }


class ClassAssociationTable:
    """Most frequent top-k tokens and bigrams per predicted class."""

    # Repeated bigrams inside one description are counted every time
    BIGRAM_COUNTING = "per_occurrence"

    def __init__(
        self,
        metric: str,
        threshold: float,
        k: int,
        classes: Dict[str, Dict[str, Any]],
        manifest_digest: Optional[str] = None,
    ):
        self.metric = metric
        self.threshold = threshold
        self.k = k
        self.classes = classes
        self.manifest_digest = manifest_digest

    @property
    def empty_classes(self) -> List[str]:
        return [code for code, block in self.classes.items() if block.get("error")]

    def unigrams(self, code: str) -> List[Tuple[str, int]]:
        return [(token, count) for token, count in self.classes[code]["unigrams"]]

    def bigrams(self, code: str) -> List[Tuple[str, int]]:
        return [(token, count) for token, count in self.classes[code]["bigrams"]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric,
            "metric_name": METRIC_NAMES[self.metric],
            "threshold": self.threshold,
            "k": self.k,
            "bigram_counting": self.BIGRAM_COUNTING,
            "manifest_digest": self.manifest_digest,
            "classes": self.classes,
        }


class EvalReport:
    """Per-metric classification blocks plus the score-level block."""

    def __init__(
        self,
        metrics: Dict[str, Dict[str, Any]],
        score: Dict[str, Any],
        test_size: int,
        vocab_digest: Optional[str] = None,
        manifest_digest: Optional[str] = None,
    ):
        self.metrics = metrics
        self.score = score
        self.test_size = test_size
        self.vocab_digest = vocab_digest
        self.manifest_digest = manifest_digest

    def accuracy(self, metric: str) -> float:
        return self.metrics[metric]["accuracy"]

    def beats_baseline(self, metric: str, margin: float = 0.0) -> bool:
        block = self.metrics[metric]
        return block["accuracy"] >= block["majority_baseline"] + margin

    def to_dict(self) -> Dict[str, Any]:
        return {
            "test_size": self.test_size,
            "vocab_digest": self.vocab_digest,
            "manifest_digest": self.manifest_digest,
            "metrics": self.metrics,
            "score": self.score,
        }


class PredictionResult:
    """Full vector, score and rating predicted for one description."""

    def __init__(
        self,
        description_digest: str,
        predictions: Dict[str, MetricPrediction],
        vector: str,
        score: float,
        rating: str,
        impact_subscore: float,
        exploitability_subscore: float,
        low_information: bool = False,
        saliency: Optional[Dict[str, SaliencyReport]] = None,
        cve_id: Optional[str] = None,
    ):
        self.description_digest = description_digest
        self.predictions = predictions
        self.vector = vector
        self.score = score
        self.rating = rating
        self.impact_subscore = impact_subscore
        self.exploitability_subscore = exploitability_subscore
        self.low_information = low_information
        self.saliency = saliency or {}
        self.cve_id = cve_id

    def check_consistency(self) -> None:
        """Raise DataError unless the score re-derives from the vector string."""
        severity = base_score(parse_vector(self.vector))
        if severity.tenths != round(self.score * 10) or severity.rating.value != self.rating:
            raise DataError(
                f"Inconsistent prediction: {self.vector} scores {severity.score}, "
                f"result says {self.score} ({self.rating})"
            )

    def to_dict(self) -> Dict[str, Any]:
        self.check_consistency()
        payload = {
            "description_digest": self.description_digest,
            "cve_id": self.cve_id,
            "metrics": {m: p.to_dict() for m, p in self.predictions.items()},
            "vector": self.vector,
            "score": self.score,
            "rating": self.rating,
            "impact_subscore": self.impact_subscore,
            "exploitability_subscore": self.exploitability_subscore,
            "low_information": self.low_information,
        }
        if self.saliency:
            payload["saliency"] = {m: r.to_dict() for m, r in self.saliency.items()}
        return payload
