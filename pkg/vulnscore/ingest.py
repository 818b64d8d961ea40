"""NVD feed loading, record normalization and train/test splitting."""

import gzip
import json
import logging
import math
import re
import zlib
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Union

import numpy as np

from .cvss import CvssVector, base_score, format_vector, parse_vector_string
from .errors import EmptyCorpus, SchemaViolation, StorageError, UnreadableSource, VectorError
from .storage import read_json, read_jsonl, write_json, write_jsonl
from .utils import payload_digest, sha256_hex


logger = logging.getLogger(__name__)

REJECT_MARKER = "** REJECT **"
SCORE_MISMATCH = "score_mismatch"
PAPER_YEARS = (2018, 2019, 2020)

_CVE_ID = re.compile(r"^CVE-(\d{4})-(\d{4,})$")


class RawEntry:
    """One CVE item as found in a feed, before any filtering."""

    def __init__(
        self,
        cve_id: str,
        description: Optional[str],
        vector_string: Optional[str] = None,
        stored_score: Optional[float] = None,
        published: Optional[str] = None,
    ):
        self.cve_id = cve_id
        self.description = description
        self.vector_string = vector_string
        self.stored_score = stored_score
        self.published = published

    def __repr__(self) -> str:
        return f"RawEntry({self.cve_id!r}, vector={self.vector_string!r})"


class VulnRecord:
    """A normalized CVE with its ground-truth vector and score."""

    def __init__(
        self,
        cve_id: str,
        description: str,
        vector: CvssVector,
        base_score: float,
        year: int,
        flags: Optional[List[str]] = None,
        cvss_version: Optional[str] = None,
    ):
        self.cve_id = cve_id
        self.description = description
        self.vector = vector
        self.base_score = base_score
        self.year = year
        self.flags = sorted(flags or [])
        self.cvss_version = cvss_version

    @property
    def score_mismatch(self) -> bool:
        return SCORE_MISMATCH in self.flags

    @property
    def recomputed_score(self) -> float:
        return base_score(self.vector).score

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cve_id": self.cve_id,
            "description": self.description,
            "vector": format_vector(self.vector),
            "score": self.base_score,
            "year": self.year,
            "flags": list(self.flags),
            "cvss_version": self.cvss_version,
        }

    @classmethod
    def from_dict(cls, row: Dict[str, Any]) -> "VulnRecord":
        vector, _ = parse_vector_string(row["vector"])
        return cls(
            cve_id=row["cve_id"],
            description=row["description"],
            vector=vector,
            base_score=float(row["score"]),
            year=int(row["year"]),
            flags=row.get("flags") or [],
            cvss_version=row.get("cvss_version"),
        )

    def __repr__(self) -> str:
        return f"VulnRecord({self.cve_id!r}, {format_vector(self.vector)!r})"


class DatasetSplit:
    """A seeded train/test partition of a corpus."""

    def __init__(
        self,
        train: List[VulnRecord],
        test: List[VulnRecord],
        seed: int,
        fraction: float,
    ):
        self.train = train
        self.test = test
        self.seed = seed
        self.fraction = fraction

    def manifest(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "train_ids": [r.cve_id for r in self.train],
            "test_ids": [r.cve_id for r in self.test],
        }

    @property
    def manifest_digest(self) -> str:
        return payload_digest(self.manifest())


def cve_sort_key(cve_id: str) -> Any:
    match = _CVE_ID.match(cve_id)
    if not match:
        return (1, cve_id)
    return (0, int(match.group(1)), int(match.group(2)))


def _read_source(source: Union[str, Path]) -> bytes:
    text = str(source)
    if text.startswith(("http://", "https://")):
        from .fetch import fetch_url

        return fetch_url(text)
    try:
        with open(source, "rb") as f:
            return f.read()
    except OSError as e:
        raise UnreadableSource(text, str(e)) from e


def _require(mapping: Any, key: str, path: str, source: str) -> Any:
    if not isinstance(mapping, dict) or key not in mapping:
        raise SchemaViolation(path, source)
    return mapping[key]


def _english_description(cve: Any, path: str, source: str) -> Optional[str]:
    description = _require(cve, "description", f"{path}.description", source)
    data = _require(description, "description_data", f"{path}.description.description_data", source)
    if not isinstance(data, list):
        raise SchemaViolation(f"{path}.description.description_data", source)
    for entry in data:
        if isinstance(entry, dict) and str(entry.get("lang", "")).lower() == "en":
            value = entry.get("value")
            if isinstance(value, str):
                return value
    return None


def load_feed(source: Union[str, Path]) -> List[RawEntry]:
    """Load an NVD JSON 1.1 feed from a path or URL, gzipped or not."""
    name = str(source)
    data = _read_source(source)
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError, zlib.error) as e:
            raise UnreadableSource(name, f"corrupt gzip stream ({e})") from e
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise UnreadableSource(name, f"not a JSON document ({e})") from e

    items = _require(document, "CVE_Items", "CVE_Items", name)
    if not isinstance(items, list):
        raise SchemaViolation("CVE_Items", name)

    entries = []
    for idx, item in enumerate(items):
        path = f"CVE_Items[{idx}]"
        cve = _require(item, "cve", f"{path}.cve", name)
        meta = _require(cve, "CVE_data_meta", f"{path}.cve.CVE_data_meta", name)
        cve_id = _require(meta, "ID", f"{path}.cve.CVE_data_meta.ID", name)
        if not isinstance(cve_id, str):
            raise SchemaViolation(f"{path}.cve.CVE_data_meta.ID", name)
        description = _english_description(cve, f"{path}.cve", name)

        vector_string = None
        stored_score = None
        impact = item.get("impact") or {}
        metric_v3 = impact.get("baseMetricV3") if isinstance(impact, dict) else None
        if metric_v3:
            cvss_v3 = _require(metric_v3, "cvssV3", f"{path}.impact.baseMetricV3.cvssV3", name)
            vector_string = _require(
                cvss_v3, "vectorString", f"{path}.impact.baseMetricV3.cvssV3.vectorString", name
            )
            stored = cvss_v3.get("baseScore")
            if stored is not None:
                try:
                    stored_score = float(stored)
                except (TypeError, ValueError):
                    raise SchemaViolation(f"{path}.impact.baseMetricV3.cvssV3.baseScore", name) from None

        entries.append(
            RawEntry(cve_id, description, vector_string, stored_score, item.get("publishedDate"))
        )
    logger.info("loaded %d entries from %s", len(entries), name)
    return entries


def normalize(
    entries: Iterable[RawEntry],
    years: Optional[Sequence[int]] = None,
) -> List[VulnRecord]:
    """Filter raw entries down to usable records.

    Keeps entries with an English, non-rejected description and a parseable
    v3 base vector. The score is recomputed; a stored score that disagrees is
    kept but flagged. Output is sorted by CVE id so reruns are byte-identical.
    """
    records: Dict[str, VulnRecord] = {}
    seen: Set[str] = set()
    dropped: Dict[str, int] = {}

    def drop(reason: str, entry: RawEntry) -> None:
        dropped[reason] = dropped.get(reason, 0) + 1
        logger.debug("dropping %s: %s", entry.cve_id, reason)

    for entry in entries:
        if entry.cve_id in seen:
            drop("duplicate id", entry)
            continue
        seen.add(entry.cve_id)
        description = (entry.description or "").strip()
        if not description:
            drop("no English description", entry)
            continue
        if description.startswith(REJECT_MARKER):
            drop("rejected", entry)
            continue
        if not entry.vector_string:
            drop("no v3 vector", entry)
            continue
        try:
            vector, version = parse_vector_string(entry.vector_string)
        except VectorError as e:
            drop(f"bad vector ({type(e).__name__})", entry)
            continue

        match = _CVE_ID.match(entry.cve_id)
        year = int(match.group(1)) if match else 0
        if years is not None and year not in years:
            drop("outside year range", entry)
            continue

        score = base_score(vector).score
        flags = []
        if entry.stored_score is not None and round(entry.stored_score * 10) != round(score * 10):
            flags.append(SCORE_MISMATCH)
        records[entry.cve_id] = VulnRecord(
            entry.cve_id, description, vector, score, year, flags, version
        )

    result = sorted(records.values(), key=lambda r: cve_sort_key(r.cve_id))
    mismatches = sum(1 for r in result if r.score_mismatch)
    if mismatches:
        logger.warning("%d records have a stored score that differs from the recomputed one", mismatches)
    logger.info(
        "kept %d records, dropped %s", len(result),
        ", ".join(f"{n} {reason}" for reason, n in sorted(dropped.items())) or "none",
    )
    return result


def split(records: Sequence[VulnRecord], seed: int, fraction: float = 0.5) -> DatasetSplit:
    """Deterministic seeded train/test split.

    floor(n * fraction) records go to train, the rest to test. The shuffle is
    applied to records sorted by id, so input order does not matter.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if not records:
        raise EmptyCorpus("corpus")
    ordered = sorted(records, key=lambda r: cve_sort_key(r.cve_id))
    permutation = np.random.default_rng(seed).permutation(len(ordered))
    n_train = int(math.floor(len(ordered) * fraction))
    train = [ordered[i] for i in permutation[:n_train]]
    test = [ordered[i] for i in permutation[n_train:]]
    return DatasetSplit(train, test, seed, fraction)


def save_dataset(path: Union[str, Path], records: Iterable[VulnRecord]) -> None:
    write_jsonl(Path(path), (r.to_dict() for r in records))


def load_dataset(path: Union[str, Path]) -> List[VulnRecord]:
    rows = read_jsonl(Path(path))
    try:
        return [VulnRecord.from_dict(row) for row in rows]
    except (KeyError, TypeError, ValueError) as e:
        raise StorageError(f"Malformed dataset file {path}: {e}") from e


def dataset_digest(path: Union[str, Path]) -> str:
    with open(path, "rb") as f:
        return sha256_hex(f.read())


def save_manifest(path: Union[str, Path], dataset_split: DatasetSplit) -> None:
    write_json(Path(path), dataset_split.manifest())


def load_split(
    records: Sequence[VulnRecord], manifest_path: Union[str, Path]
) -> DatasetSplit:
    """Rebuild a split from a persisted manifest."""
    manifest = read_json(Path(manifest_path))
    by_id = {r.cve_id: r for r in records}
    try:
        train = [by_id[cve_id] for cve_id in manifest["train_ids"]]
        test = [by_id[cve_id] for cve_id in manifest["test_ids"]]
        seed, fraction = int(manifest["seed"]), float(manifest["fraction"])
    except (KeyError, TypeError, ValueError) as e:
        raise StorageError(
            f"Manifest {manifest_path} does not match the dataset ({type(e).__name__}: {e})"
        ) from e
    return DatasetSplit(train, test, seed, fraction)
