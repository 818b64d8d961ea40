"""Tests for storage functionality."""

import json
import tempfile
from pathlib import Path

import pytest

from vulnscore.errors import StorageError
from vulnscore.storage import (
    ReportStore,
    atomic_write_text,
    read_json,
    read_jsonl,
    read_text,
    write_json,
    write_jsonl,
)
from vulnscore.utils import canonical_json, payload_digest


@pytest.fixture
def temp_store():
    """Create a temporary report store."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield ReportStore(Path(temp_dir) / "reports")


def test_save_report(temp_store):
    """Test saving a report under its content hash."""
    payload = {"test_size": 3, "score": {"mae": 0.5}}
    path = temp_store.save("eval", payload)

    assert path.name == f"eval-{payload_digest(payload)[:12]}.json"
    assert temp_store.load(path) == payload


def test_same_payload_same_file(temp_store):
    """Identical reports map to one file."""
    first = temp_store.save("prediction", {"vector": "AV:N", "score": 9.8})
    second = temp_store.save("prediction", {"score": 9.8, "vector": "AV:N"})

    assert first == second
    assert len(temp_store.list_reports()) == 1


def test_list_reports_by_kind(temp_store):
    """Test filtering the report listing by kind."""
    temp_store.save("eval", {"n": 1})
    temp_store.save("eval", {"n": 2})
    temp_store.save("explain", {"n": 1})

    assert len(temp_store.list_reports()) == 3
    assert len(temp_store.list_reports("eval")) == 2
    assert [p.name.split("-")[0] for p in temp_store.list_reports("explain")] == ["explain"]


def test_list_reports_without_directory():
    """A store whose directory does not exist yet lists nothing."""
    assert ReportStore("/nonexistent/reports").list_reports() == []


def test_report_files_are_canonical(temp_store):
    """Reports are written with sorted keys and indentation."""
    path = temp_store.save("eval", {"b": 1, "a": [1, 2]})

    assert path.read_text(encoding="utf-8") == canonical_json({"a": [1, 2], "b": 1}) + "\n"


def test_jsonl_round_trip(tmp_path):
    """Test writing and reading JSON lines."""
    rows = [{"type": "header", "metric": "AV"}, {"type": "epoch", "epoch": 1, "loss": 0.69}]
    write_jsonl(tmp_path / "log.jsonl", rows)

    assert read_jsonl(tmp_path / "log.jsonl") == rows
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert lines[0] == '{"metric":"AV","type":"header"}'


def test_read_jsonl_reports_bad_line(tmp_path):
    """Test error on a malformed JSON line."""
    path = tmp_path / "log.jsonl"
    path.write_text('{"ok": 1}\nnot json\n')

    with pytest.raises(StorageError, match="line 2"):
        read_jsonl(path)


def test_read_json_errors(tmp_path):
    """Missing and malformed files raise StorageError."""
    with pytest.raises(StorageError):
        read_json(tmp_path / "missing.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(StorageError):
        read_json(bad)


def test_atomic_write_creates_parents(tmp_path):
    """Test that parent directories are created and no temp file is left."""
    path = tmp_path / "a" / "b" / "vocab.txt"
    atomic_write_text(path, "[PAD]\n")

    assert read_text(path) == "[PAD]\n"
    assert [p.name for p in path.parent.iterdir()] == ["vocab.txt"]


def test_write_json_overwrites(tmp_path):
    """Rewriting a file replaces its content."""
    path = tmp_path / "manifest.json"
    write_json(path, {"seed": 1})
    write_json(path, {"seed": 2})

    assert json.loads(path.read_text()) == {"seed": 2}


def test_storage_error_exit_code():
    """Storage failures map to their own exit code."""
    assert StorageError("x").exit_code == 5
    assert isinstance(StorageError("x"), OSError)
