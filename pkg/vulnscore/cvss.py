"""CVSS v3.1 base metrics: parsing, formatting, scoring and severity ratings."""

import itertools
import math
from enum import Enum
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple, Type, Union

from .errors import (
    DuplicateMetric,
    MalformedPair,
    MissingMetric,
    OutOfRange,
    UnknownKey,
    UnknownValue,
)


SUPPORTED_VERSIONS = ("3.0", "3.1")
PREFIX = "CVSS:3.1/"


class MetricValue(Enum):
    """A metric value with its one-letter wire code and its long name.

    Member order is the class order used by the per-metric classifiers.
    """

    def __init__(self, code: str, label: str):
        self.code = code
        self.label = label

    @classmethod
    def from_code(cls, code: str) -> "MetricValue":
        for member in cls:
            if member.code == code:
                return member
        raise KeyError(code)

    @classmethod
    def codes(cls) -> List[str]:
        return [member.code for member in cls]

    @property
    def index(self) -> int:
        return list(type(self)).index(self)


class AttackVector(MetricValue):
    NETWORK = ("N", "Network")
    ADJACENT = ("A", "Adjacent")
    LOCAL = ("L", "Local")
    PHYSICAL = ("P", "Physical")


class AttackComplexity(MetricValue):
    LOW = ("L", "Low")
    HIGH = ("H", "High")


class PrivilegesRequired(MetricValue):
    NONE = ("N", "None")
    LOW = ("L", "Low")
    HIGH = ("H", "High")


class UserInteraction(MetricValue):
    NONE = ("N", "None")
    REQUIRED = ("R", "Required")


class Scope(MetricValue):
    UNCHANGED = ("U", "Unchanged")
    CHANGED = ("C", "Changed")


class Impact(MetricValue):
    HIGH = ("H", "High")
    LOW = ("L", "Low")
    NONE = ("N", "None")


# Canonical order: AV, AC, PR, UI, S, C, I, A
METRICS: Dict[str, Type[MetricValue]] = {
    "AV": AttackVector,
    "AC": AttackComplexity,
    "PR": PrivilegesRequired,
    "UI": UserInteraction,
    "S": Scope,
    "C": Impact,
    "I": Impact,
    "A": Impact,
}

METRIC_NAMES = {
    "AV": "Attack Vector",
    "AC": "Attack Complexity",
    "PR": "Privileges Required",
    "UI": "User Interaction",
    "S": "Scope",
    "C": "Confidentiality Impact",
    "I": "Integrity Impact",
    "A": "Availability Impact",
}

METRIC_ORDER = list(METRICS)


class CvssVector(NamedTuple):
    """The eight base metric values of one vulnerability."""

    av: AttackVector
    ac: AttackComplexity
    pr: PrivilegesRequired
    ui: UserInteraction
    s: Scope
    c: Impact
    i: Impact
    a: Impact

    def get(self, metric: str) -> MetricValue:
        """Return the value of a metric given by its key ("AV", "PR", ...)."""
        if metric not in METRICS:
            raise UnknownKey(metric)
        return getattr(self, metric.lower())

    @classmethod
    def from_codes(cls, codes: Dict[str, str]) -> "CvssVector":
        """Build a vector from a {key: code} mapping covering all eight metrics."""
        values = []
        for key in METRIC_ORDER:
            if key not in codes:
                raise MissingMetric(key)
            try:
                values.append(METRICS[key].from_code(codes[key]))
            except KeyError:
                raise UnknownValue(key, codes[key]) from None
        return cls(*values)


# Numeric weights from the CVSS v3.1 specification
WEIGHTS: Dict[str, Dict[str, float]] = {
    "AV": {"N": 0.85, "A": 0.62, "L": 0.55, "P": 0.2},
    "AC": {"L": 0.77, "H": 0.44},
    "UI": {"N": 0.85, "R": 0.62},
    "CIA": {"H": 0.56, "L": 0.22, "N": 0.0},
}

PR_WEIGHTS: Dict[str, Dict[str, float]] = {
    "U": {"N": 0.85, "L": 0.62, "H": 0.27},
    "C": {"N": 0.85, "L": 0.68, "H": 0.5},
}


class Rating(Enum):
    NONE = "None"
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    CRITICAL = "Critical"


class Severity:
    """A base score with its qualitative rating and sub-scores."""

    def __init__(
        self,
        score: float,
        rating: Rating,
        impact: float = 0.0,
        exploitability: float = 0.0,
    ):
        self.score = score
        self.rating = rating
        self.impact = impact
        self.exploitability = exploitability

    @property
    def tenths(self) -> int:
        return int(round(self.score * 10))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Severity):
            return NotImplemented
        return self.tenths == other.tenths and self.rating == other.rating

    def __repr__(self) -> str:
        return f"Severity({self.score:.1f}, {self.rating.value})"

    def to_dict(self) -> Dict[str, Union[float, str]]:
        return {
            "score": self.score,
            "rating": self.rating.value,
            "impact_subscore": round_half_up(self.impact),
            "exploitability_subscore": round_half_up(self.exploitability),
        }


def split_version(text: str) -> Tuple[Optional[str], str]:
    """Split an optional "CVSS:x.y/" prefix from a vector string."""
    text = text.strip()
    if not text.startswith("CVSS:"):
        return None, text
    head, _, body = text.partition("/")
    version = head[len("CVSS:"):]
    if version not in SUPPORTED_VERSIONS:
        raise UnknownValue("CVSS", version)
    return version, body


def parse_vector_string(text: str) -> Tuple[CvssVector, Optional[str]]:
    """Parse a vector string, returning the vector and its claimed version.

    The claimed version is None for bare vectors. 3.0 vectors are accepted;
    their base metrics and equations are the same as 3.1.
    """
    version, body = split_version(text)
    codes: Dict[str, str] = {}
    for fragment in body.split("/"):
        parts = fragment.split(":")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise MalformedPair(fragment)
        key, value = parts[0].strip(), parts[1].strip()
        if key not in METRICS:
            raise UnknownKey(key)
        if value not in METRICS[key].codes():
            raise UnknownValue(key, value)
        if key in codes:
            raise DuplicateMetric(key)
        codes[key] = value
    return CvssVector.from_codes(codes), version


def parse_vector(text: str) -> CvssVector:
    """Parse a CVSS v3.x base vector, order- and prefix-insensitive."""
    return parse_vector_string(text)[0]


def format_vector(vector: CvssVector, with_prefix: bool = False) -> str:
    """Render a vector in canonical AV, AC, PR, UI, S, C, I, A order."""
    body = "/".join(f"{key}:{value.code}" for key, value in zip(METRIC_ORDER, vector))
    return PREFIX + body if with_prefix else body


def all_vectors() -> Iterator[CvssVector]:
    """Yield every one of the 2,592 base vectors."""
    for values in itertools.product(*(list(METRICS[key]) for key in METRIC_ORDER)):
        yield CvssVector(*values)


def round_up(value: float) -> float:
    """Smallest one-decimal number >= value.

    Scales to an integer first so float noise such as 0.1 + 0.2 rounds to
    0.3 and not 0.4.
    """
    scaled = int(round(value * 100000))
    if scaled % 10000 == 0:
        return scaled / 100000.0
    return (math.floor(scaled / 10000) + 1) / 10.0


def round_half_up(value: float) -> float:
    return math.floor(value * 10 + 0.5) / 10.0


def impact_subscore(vector: CvssVector) -> float:
    cia = WEIGHTS["CIA"]
    iss = 1 - (1 - cia[vector.c.code]) * (1 - cia[vector.i.code]) * (1 - cia[vector.a.code])
    if vector.s is Scope.UNCHANGED:
        return 6.42 * iss
    return 7.52 * (iss - 0.029) - 3.25 * (iss - 0.02) ** 15


def exploitability_subscore(vector: CvssVector) -> float:
    return (
        8.22
        * WEIGHTS["AV"][vector.av.code]
        * WEIGHTS["AC"][vector.ac.code]
        * PR_WEIGHTS[vector.s.code][vector.pr.code]
        * WEIGHTS["UI"][vector.ui.code]
    )


def base_score(vector: CvssVector) -> Severity:
    """Compute the CVSS v3.1 base score of a vector."""
    impact = impact_subscore(vector)
    exploitability = exploitability_subscore(vector)
    if impact <= 0:
        score = 0.0
    elif vector.s is Scope.UNCHANGED:
        score = round_up(min(impact + exploitability, 10))
    else:
        score = round_up(min(1.08 * (impact + exploitability), 10))
    return Severity(score, severity_rating(score), max(impact, 0.0), exploitability)


def severity_rating(score: float) -> Rating:
    """Map a one-decimal score to its v3.1 qualitative rating band."""
    try:
        tenths = round(float(score) * 10)
    except (TypeError, ValueError, OverflowError):
        raise OutOfRange(score) from None
    if abs(float(score) * 10 - tenths) > 1e-6 or not 0 <= tenths <= 100:
        raise OutOfRange(score)
    if tenths == 0:
        return Rating.NONE
    if tenths <= 39:
        return Rating.LOW
    if tenths <= 69:
        return Rating.MEDIUM
    if tenths <= 89:
        return Rating.HIGH
    return Rating.CRITICAL
