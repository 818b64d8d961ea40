"""File storage for datasets, manifests, logs and reports."""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from .errors import StorageError
from .utils import canonical_json, payload_digest


logger = logging.getLogger(__name__)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write a file via a temp file in the same directory and a rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}") from e


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_text(path: Path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e


def write_json(path: Path, payload: Any) -> None:
    atomic_write_text(path, canonical_json(payload) + "\n")


def read_json(path: Path) -> Any:
    text = read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise StorageError(f"Invalid JSON in {path}: {e}") from e


def write_jsonl(path: Path, rows: Iterable[Dict[str, Any]]) -> None:
    """Write one compact, key-sorted JSON object per line."""
    lines = [
        json.dumps(row, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        for row in rows
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    rows = []
    for lineno, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise StorageError(f"Invalid JSON on line {lineno} of {path}: {e}") from e
    return rows


class ReportStore:
    """Directory of structured reports named by content hash."""

    def __init__(self, reports_dir: Union[str, Path]):
        self.reports_dir = Path(reports_dir)

    def save(self, kind: str, payload: Dict[str, Any]) -> Path:
        """Persist a report as <kind>-<hash>.json and return its path."""
        digest = payload_digest(payload)
        path = self.reports_dir / f"{kind}-{digest[:12]}.json"
        if not path.exists():
            write_json(path, payload)
            logger.info("wrote %s", path)
        return path

    def list_reports(self, kind: Optional[str] = None) -> List[Path]:
        if not self.reports_dir.exists():
            return []
        pattern = f"{kind}-*.json" if kind else "*.json"
        return sorted(self.reports_dir.glob(pattern))

    def load(self, path: Union[str, Path]) -> Dict[str, Any]:
        return read_json(Path(path))
