"""Pipeline configuration loading."""

import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .ingest import PAPER_YEARS
from .tokenizer import DEFAULT_SEQ_LEN
from .training import TrainConfig
from .validation import config_issues


CONFIG_ENV_VAR = "VULNSCORE_CONFIG"
DEFAULT_CONFIG_NAME = "vulnscore.yaml"


class PathsConfig:
    """Where each pipeline artifact lives."""

    def __init__(
        self,
        dataset: str = "data/dataset.jsonl",
        manifest: str = "data/manifest.json",
        vocab: str = "data/vocab.txt",
        checkpoints: str = "checkpoints",
        reports: str = "reports",
    ):
        self.dataset = Path(dataset)
        self.manifest = Path(manifest)
        self.vocab = Path(vocab)
        self.checkpoints = Path(checkpoints)
        self.reports = Path(reports)

    def training_log(self, metric: str) -> Path:
        return self.checkpoints / f"{metric}.log.jsonl"


class ThresholdsConfig:
    def __init__(self, confidence: float = 0.9, top_k: int = 5):
        self.confidence = confidence
        self.top_k = top_k


class TrainSettings:
    """Training schedule shared by the eight classifiers."""

    def __init__(
        self,
        epochs_frozen: int = 3,
        epochs_joint: int = 3,
        batch_size: int = 32,
        learning_rate: Optional[float] = None,
        optimizer: str = "adam",
        dropout_rate: float = 0.1,
    ):
        self.epochs_frozen = epochs_frozen
        self.epochs_joint = epochs_joint
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.dropout_rate = dropout_rate


class PipelineConfig:
    """The single configuration surface of every command."""

    def __init__(
        self,
        paths: Optional[Dict[str, Any]] = None,
        preset: str = "desk",
        seed: int = 0,
        seq_len: int = DEFAULT_SEQ_LEN,
        vocab_size: int = 8000,
        years: Optional[List[int]] = None,
        split_fraction: float = 0.5,
        thresholds: Optional[Dict[str, Any]] = None,
        train: Optional[Dict[str, Any]] = None,
        source: Optional[Path] = None,
    ):
        self.paths = PathsConfig(**(paths or {}))
        self.preset = preset
        self.seed = seed
        self.seq_len = seq_len
        self.vocab_size = vocab_size
        self.years = list(years) if years is not None else list(PAPER_YEARS)
        self.split_fraction = split_fraction
        self.thresholds = ThresholdsConfig(**(thresholds or {}))
        self.train = TrainSettings(**(train or {}))
        self.source = source

    def train_config(
        self,
        metric: str,
        seed: Optional[int] = None,
        manifest_digest: Optional[str] = None,
    ) -> TrainConfig:
        return TrainConfig(
            metric=metric,
            epochs_frozen=self.train.epochs_frozen,
            epochs_joint=self.train.epochs_joint,
            batch_size=self.train.batch_size,
            learning_rate=self.train.learning_rate,
            optimizer=self.train.optimizer,
            seed=self.seed if seed is None else seed,
            preset=self.preset,
            seq_len=self.seq_len,
            dropout_rate=self.train.dropout_rate,
            manifest_digest=manifest_digest,
        )


def load_pipeline_config(file_path: Optional[Path]) -> PipelineConfig:
    """Load and validate a pipeline configuration file.

    None gives the built-in defaults.
    """
    if file_path is None:
        return PipelineConfig()
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"Config file not found: {file_path}")

    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise yaml.YAMLError(f"Failed to parse YAML in {file_path}: {e}") from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"Invalid YAML structure in {file_path}")

    issues = config_issues(data)
    if issues:
        raise ValueError(f"Invalid config {file_path}: " + "; ".join(issues))
    return PipelineConfig(source=file_path, **data)


def resolve_config_path(explicit: Optional[Path] = None) -> Optional[Path]:
    """--config wins, then $VULNSCORE_CONFIG, then ./vulnscore.yaml if present."""
    if explicit is not None:
        return Path(explicit)
    from_env = os.environ.get(CONFIG_ENV_VAR)
    if from_env:
        return Path(from_env)
    local = Path(DEFAULT_CONFIG_NAME)
    if local.exists():
        return local
    return None


STARTER_TEMPLATE = """\
# vulnscore pipeline configuration
preset: {preset}       # tiny, desk or paper-small
seed: 0
seq_len: 128
vocab_size: 8000
years: [2018, 2019, 2020]
split_fraction: 0.5

paths:
  dataset: {name}/dataset.jsonl
  manifest: {name}/manifest.json
  vocab: {name}/vocab.txt
  checkpoints: {name}/checkpoints
  reports: {name}/reports

thresholds:
  confidence: 0.9      # aggregate keeps predictions above this probability
  top_k: 5

train:
  epochs_frozen: 3     # encoder frozen, head only
  epochs_joint: 3
  batch_size: 32
  optimizer: adam      # adam or sgd
  # learning_rate: 0.001   # defaults per preset
  dropout_rate: 0.1
"""


def starter_config(name: str, preset: str = "desk") -> str:
    return STARTER_TEMPLATE.format(name=name, preset=preset)
