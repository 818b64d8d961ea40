"""Exception hierarchy for vulnscore.

Every failure the CLI can report belongs to one of three categories, each
with its own exit code. Usage errors are left to click (exit code 2).
"""

from typing import Any, Dict, List, Optional


class VulnscoreError(Exception):
    """Base class for all vulnscore errors."""

    exit_code = 1


class DataError(VulnscoreError, ValueError):
    """Bad input data: vectors, feeds, corpora, labels."""

    exit_code = 3


class ModelError(VulnscoreError):
    """Problems with tensors, models or checkpoints."""

    exit_code = 4


class StorageError(VulnscoreError, OSError):
    """Files that cannot be read or written."""

    exit_code = 5


# cvss

class VectorError(DataError):
    """A CVSS vector string could not be parsed."""


class MissingMetric(VectorError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Missing base metric '{name}'")


class DuplicateMetric(VectorError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Base metric '{name}' given more than once")


class UnknownKey(VectorError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"Unknown metric key '{key}'")


class UnknownValue(VectorError):
    def __init__(self, key: str, value: str):
        self.key = key
        self.value = value
        super().__init__(f"Unknown value '{value}' for metric '{key}'")


class MalformedPair(VectorError):
    def __init__(self, fragment: str):
        self.fragment = fragment
        super().__init__(f"Malformed KEY:VALUE pair '{fragment}'")


class OutOfRange(DataError):
    def __init__(self, score: Any):
        self.score = score
        super().__init__(f"Score {score!r} is not a one-decimal value in [0.0, 10.0]")


# ingest

class UnreadableSource(StorageError):
    def __init__(self, source: str, reason: str):
        self.source = source
        self.reason = reason
        super().__init__(f"Cannot read feed {source}: {reason}")


class PartialDownload(UnreadableSource):
    def __init__(self, failed: List[str], reason: str, saved: Dict[int, Any]):
        self.failed = failed
        self.saved = saved
        kept = ", ".join(str(saved[year]) for year in sorted(saved)) or "none"
        super().__init__(", ".join(failed), f"{reason} (saved: {kept})")


class SchemaViolation(DataError):
    def __init__(self, path: str, source: Optional[str] = None):
        self.path = path
        self.source = source
        where = f" in {source}" if source else ""
        super().__init__(f"Feed does not follow the NVD 1.1 schema at '{path}'{where}")


class EmptyCorpus(DataError):
    def __init__(self, what: str = "corpus"):
        super().__init__(f"Empty {what}")


class LengthMismatch(DataError):
    def __init__(self, left: int, right: int):
        self.left = left
        self.right = right
        super().__init__(f"Length mismatch: {left} != {right}")


# tokenizer

class SpanOutOfRange(DataError, IndexError):
    def __init__(self, start: int, end: int, limit: int):
        self.start = start
        self.end = end
        super().__init__(
            f"Span [{start}, {end}) is not inside the real tokens [1, {limit})"
        )


# numerics and model

class ShapeMismatch(ModelError):
    def __init__(self, op: str, *shapes: Any):
        self.op = op
        self.shapes = shapes
        rendered = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NonScalarOutput(ModelError):
    def __init__(self, shape: Any):
        self.shape = tuple(shape)
        super().__init__(f"backward() needs a scalar output, got shape {self.shape}")


class VocabMismatch(ModelError):
    def __init__(self, message: str):
        super().__init__(message)


class TargetOutOfRange(ModelError):
    def __init__(self, target: int, num_classes: int):
        self.target = target
        self.num_classes = num_classes
        super().__init__(f"Target class {target} outside [0, {num_classes})")


class CorruptCheckpoint(ModelError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"Corrupt checkpoint {path}: {reason}")


class VersionMismatch(ModelError):
    def __init__(self, path: str, found: Any, expected: Any):
        self.found = found
        self.expected = expected
        super().__init__(
            f"Checkpoint {path} has format version {found}, expected {expected}"
        )


class MissingCheckpoint(ModelError):
    def __init__(self, metric: str, path: Optional[str] = None):
        self.metric = metric
        where = f" at {path}" if path else ""
        super().__init__(f"No checkpoint for metric {metric}{where}")


# training

class EmptyTrainSet(DataError):
    def __init__(self) -> None:
        super().__init__("Training split is empty")


class LabelProjectionError(DataError):
    def __init__(self, cve_id: str, metric: str):
        self.cve_id = cve_id
        self.metric = metric
        super().__init__(f"Cannot project {cve_id} onto metric {metric}")


# saliency

class EmptyFilteredSet(DataError):
    def __init__(self, class_code: str, threshold: float):
        self.class_code = class_code
        self.threshold = threshold
        super().__init__(
            f"No confident predictions for class {class_code} above {threshold}"
        )
