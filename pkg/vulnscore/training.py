"""Per-metric training with a frozen-encoder warmup followed by joint fine-tuning."""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .cvss import METRICS
from .errors import EmptyTrainSet, LabelProjectionError, UnknownKey
from .ingest import DatasetSplit, VulnRecord
from .model import EncoderClassifier, ModelCheckpoint, ModelConfig, PRESETS
from .numerics import ComputationTape, cross_entropy
from .optim import make_optimizer
from .storage import write_jsonl
from .tokenizer import DEFAULT_SEQ_LEN, TokenSequence, Vocabulary, tokenize


logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATES = {"paper-small": 2e-5, "desk": 1e-3, "tiny": 1e-3}
OPTIMIZERS = ("adam", "sgd")

FROZEN = "frozen"
JOINT = "joint"


class TrainConfig:
    """Schedule and optimizer settings for one metric's classifier."""

    def __init__(
        self,
        metric: str,
        epochs_frozen: int = 3,
        epochs_joint: int = 3,
        batch_size: int = 32,
        learning_rate: Optional[float] = None,
        optimizer: str = "adam",
        seed: int = 0,
        preset: str = "desk",
        seq_len: int = DEFAULT_SEQ_LEN,
        dropout_rate: float = 0.1,
        manifest_digest: Optional[str] = None,
    ):
        if metric not in METRICS:
            raise UnknownKey(metric)
        if epochs_frozen < 0:
            raise ValueError(f"epochs_frozen must be >= 0, got {epochs_frozen}")
        if epochs_joint < 1:
            raise ValueError(f"epochs_joint must be >= 1, got {epochs_joint}")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if optimizer not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{optimizer}'. Must be one of: {', '.join(OPTIMIZERS)}")
        if preset not in PRESETS:
            raise ValueError(f"Unknown preset '{preset}'. Must be one of: {', '.join(PRESETS)}")
        self.metric = metric
        self.epochs_frozen = epochs_frozen
        self.epochs_joint = epochs_joint
        self.batch_size = batch_size
        self.learning_rate = learning_rate if learning_rate is not None else DEFAULT_LEARNING_RATES[preset]
        self.optimizer = optimizer
        self.seed = seed
        self.preset = preset
        self.seq_len = seq_len
        self.dropout_rate = dropout_rate
        self.manifest_digest = manifest_digest

    @property
    def total_epochs(self) -> int:
        return self.epochs_frozen + self.epochs_joint

    def phase(self, epoch: int) -> str:
        """Phase of a 1-based epoch number."""
        return FROZEN if epoch <= self.epochs_frozen else JOINT

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig.from_preset(
            self.preset, vocab_size, self.metric,
            seq_len=self.seq_len, seed=self.seed, dropout_rate=self.dropout_rate,
        )


class TrainingResult:
    """A trained model, its checkpoint and the structured training log."""

    def __init__(self, model: EncoderClassifier, checkpoint: ModelCheckpoint, log: List[Dict[str, Any]]):
        self.model = model
        self.checkpoint = checkpoint
        self.log = log

    @property
    def header(self) -> Dict[str, Any]:
        return self.log[0]

    @property
    def epochs(self) -> List[Dict[str, Any]]:
        return self.log[1:]

    def save_log(self, path: Union[str, Path]) -> None:
        write_jsonl(Path(path), self.log)


def project_labels(records: Sequence[VulnRecord], metric: str) -> np.ndarray:
    """Class index of each record's value for one metric."""
    labels = []
    for record in records:
        try:
            labels.append(record.vector.get(metric).index)
        except (AttributeError, UnknownKey, ValueError):
            raise LabelProjectionError(getattr(record, "cve_id", "?"), metric) from None
    return np.array(labels, dtype=np.int64)


def encode_batch(sequences: Sequence[TokenSequence]) -> tuple:
    ids = np.array([s.ids for s in sequences], dtype=np.int64)
    mask = np.array([s.mask for s in sequences], dtype=np.int64)
    return ids, mask


def _inference_accuracy(model: EncoderClassifier, ids: np.ndarray, mask: np.ndarray, labels: np.ndarray, batch_size: int) -> float:
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits, _ = model.forward_batch(ids[start:start + batch_size], mask[start:start + batch_size])
        correct += int((np.argmax(logits.data, axis=-1) == labels[start:start + batch_size]).sum())
    return correct / len(labels)


def train_metric(
    config: TrainConfig,
    split: DatasetSplit,
    vocab: Vocabulary,
    model_config: Optional[ModelConfig] = None,
    on_epoch: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> TrainingResult:
    """Train one classifier on split.train.

    During the first epochs_frozen epochs only the classification head is
    updated; afterwards every parameter is. Each epoch reshuffles the data
    with a generator seeded from (seed, epoch).
    """
    records = split.train
    if not records:
        raise EmptyTrainSet()
    labels = project_labels(records, config.metric)
    manifest_digest = config.manifest_digest or split.manifest_digest

    model_config = model_config or config.model_config(len(vocab))
    sequences = [tokenize(r.description, vocab, model_config.seq_len) for r in records]
    ids, mask = encode_batch(sequences)

    model = EncoderClassifier(model_config, vocab_digest=vocab.digest)
    optimizer = make_optimizer(config.optimizer, model.params, config.learning_rate)

    header = {
        "type": "header",
        "metric": config.metric,
        "preset": config.preset,
        "seed": config.seed,
        "epochs_frozen": config.epochs_frozen,
        "epochs_joint": config.epochs_joint,
        "batch_size": config.batch_size,
        "dropout_rate": model_config.dropout_rate,
        "train_size": len(records),
        "manifest_digest": manifest_digest,
        "vocab_digest": vocab.digest,
    }
    header.update(optimizer.hyperparams())
    log: List[Dict[str, Any]] = [header]
    logger.info(
        "training %s on %d records (%d frozen + %d joint epochs)",
        config.metric, len(records), config.epochs_frozen, config.epochs_joint,
    )

    n = len(records)
    for epoch in range(1, config.total_epochs + 1):
        phase = config.phase(epoch)
        model.set_encoder_frozen(phase == FROZEN)
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)

        total_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            with ComputationTape() as tape:
                logits, _ = model.forward_batch(ids[batch], mask[batch], rng=rng)
                batch_loss = cross_entropy(logits, labels[batch])
            tape.backward(batch_loss)
            optimizer.step()
            total_loss += batch_loss.item() * len(batch)

        entry = {
            "type": "epoch",
            "epoch": epoch,
            "phase": phase,
            "loss": total_loss / n,
            "accuracy": _inference_accuracy(model, ids, mask, labels, max(config.batch_size, 64)),
            "encoder_digest": model.encoder_digest(),
        }
        log.append(entry)
        logger.info(
            "%s epoch %d (%s): loss %.4f, train accuracy %.3f",
            config.metric, epoch, phase, entry["loss"], entry["accuracy"],
        )
        if on_epoch is not None:
            on_epoch(entry)

    model.set_encoder_frozen(False)
    metadata = {
        "metric": config.metric,
        "preset": config.preset,
        "seed": config.seed,
        "epochs_frozen": config.epochs_frozen,
        "epochs_joint": config.epochs_joint,
        "manifest_digest": manifest_digest,
    }
    model.metadata = metadata
    return TrainingResult(model, model.to_checkpoint(), log)


