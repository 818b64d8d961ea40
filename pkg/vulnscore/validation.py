"""Validation utilities for pipeline configuration files."""

from pathlib import Path
from typing import Any, Dict, List

import yaml

from .model import PRESETS
from .tokenizer import MIN_VOCAB_SIZE
from .training import OPTIMIZERS


SECTIONS = {
    "paths", "preset", "seed", "seq_len", "vocab_size", "years",
    "split_fraction", "thresholds", "train",
}
PATH_KEYS = {"dataset", "manifest", "vocab", "checkpoints", "reports"}
THRESHOLD_KEYS = {"confidence", "top_k"}
TRAIN_KEYS = {"epochs_frozen", "epochs_joint", "batch_size", "learning_rate", "optimizer", "dropout_rate"}
MIN_SEQ_LEN = 8


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_int(issues: List[str], where: str, value: Any, minimum: int) -> None:
    if not _is_int(value) or value < minimum:
        issues.append(f"{where} must be an integer >= {minimum}, got {value!r}")


def _check_mapping(issues: List[str], name: str, value: Any, known: set) -> Dict[str, Any]:
    if not isinstance(value, dict):
        issues.append(f"{name} must be a mapping")
        return {}
    for key in sorted(set(value) - known):
        issues.append(f"Unknown key '{key}' in {name}. Must be one of: {', '.join(sorted(known))}")
    return value


def config_issues(data: Dict[str, Any]) -> List[str]:
    """Return the problems found in a parsed config mapping."""
    issues: List[str] = []

    for key in sorted(set(data) - SECTIONS):
        issues.append(f"Unknown section '{key}'")

    if "paths" in data:
        paths = _check_mapping(issues, "paths", data["paths"], PATH_KEYS)
        for key, value in sorted(paths.items()):
            if key in PATH_KEYS and not isinstance(value, str):
                issues.append(f"paths.{key} must be a string")

    preset = data.get("preset", "desk")
    if preset not in PRESETS:
        issues.append(f"Invalid preset '{preset}'. Must be one of: {', '.join(PRESETS)}")

    if "seed" in data:
        _check_int(issues, "seed", data["seed"], 0)
    if "seq_len" in data:
        _check_int(issues, "seq_len", data["seq_len"], MIN_SEQ_LEN)
    if "vocab_size" in data:
        _check_int(issues, "vocab_size", data["vocab_size"], MIN_VOCAB_SIZE)

    if "years" in data:
        years = data["years"]
        if not isinstance(years, list) or not years or not all(_is_int(y) for y in years):
            issues.append("years must be a non-empty list of integers")

    if "split_fraction" in data:
        fraction = data["split_fraction"]
        if not _is_number(fraction) or not 0 < fraction < 1:
            issues.append(f"split_fraction must be in (0, 1), got {fraction!r}")

    if "thresholds" in data:
        thresholds = _check_mapping(issues, "thresholds", data["thresholds"], THRESHOLD_KEYS)
        if "confidence" in thresholds:
            confidence = thresholds["confidence"]
            if not _is_number(confidence) or not 0 < confidence <= 1:
                issues.append(f"thresholds.confidence must be in (0, 1], got {confidence!r}")
        if "top_k" in thresholds:
            _check_int(issues, "thresholds.top_k", thresholds["top_k"], 1)

    if "train" in data:
        train = _check_mapping(issues, "train", data["train"], TRAIN_KEYS)
        if "epochs_frozen" in train:
            _check_int(issues, "train.epochs_frozen", train["epochs_frozen"], 0)
        if "epochs_joint" in train:
            _check_int(issues, "train.epochs_joint", train["epochs_joint"], 1)
        if "batch_size" in train:
            _check_int(issues, "train.batch_size", train["batch_size"], 1)
        rate = train.get("learning_rate")
        if rate is not None and (not _is_number(rate) or rate <= 0):
            issues.append(f"train.learning_rate must be a positive number, got {rate!r}")
        optimizer = train.get("optimizer", "adam")
        if optimizer not in OPTIMIZERS:
            issues.append(f"Invalid optimizer '{optimizer}'. Must be one of: {', '.join(OPTIMIZERS)}")
        if "dropout_rate" in train:
            dropout = train["dropout_rate"]
            if not _is_number(dropout) or not 0 <= dropout < 1:
                issues.append(f"train.dropout_rate must be in [0, 1), got {dropout!r}")

    return issues


def validate_config_file(file_path: Path) -> List[str]:
    """Validate a config file and return a list of issues found.

    Returns an empty list if the file is valid.
    """
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        return [f"Invalid YAML: {e}"]

    if data is None:
        return []
    if not isinstance(data, dict):
        return ["File must contain a YAML mapping at the top level"]
    return config_issues(data)
