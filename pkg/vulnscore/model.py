"""Transformer-encoder classifier and its checkpoint format.

Token + learned position embeddings feed a stack of post-norm encoder
blocks (multi-head self-attention and a GELU feed-forward network, each
with a residual connection and layer norm). The final [CLS] vector goes
through a linear classification head.
"""

import json
import logging
import math
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cvss import METRICS
from .errors import (
    CorruptCheckpoint,
    ShapeMismatch,
    StorageError,
    VersionMismatch,
    VocabMismatch,
)
from .numerics import (
    Tensor,
    add,
    cross_entropy,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    slice_,
    softmax,
    softmax_array,
    transpose,
)
from .storage import atomic_write_bytes
from .tokenizer import DEFAULT_SEQ_LEN, TokenSequence
from .utils import digest_arrays, sha256_hex


logger = logging.getLogger(__name__)

PRESETS: Dict[str, Dict[str, int]] = {
    # Mirrors BERT-small: 4 layers, hidden 512
    "paper-small": {"num_layers": 4, "hidden_dim": 512, "num_heads": 8, "ffn_dim": 2048},
    "desk": {"num_layers": 2, "hidden_dim": 64, "num_heads": 4, "ffn_dim": 128},
    "tiny": {"num_layers": 1, "hidden_dim": 16, "num_heads": 2, "ffn_dim": 32},
}

MASK_VALUE = -1e9
INIT_STD = 0.02
HEAD_PREFIX = "classifier."


class ModelConfig:
    """Shape and regularization settings of one per-metric classifier."""

    def __init__(
        self,
        vocab_size: int,
        num_classes: int,
        seq_len: int = DEFAULT_SEQ_LEN,
        hidden_dim: int = 64,
        num_layers: int = 2,
        num_heads: int = 4,
        ffn_dim: int = 128,
        dropout_rate: float = 0.1,
        seed: int = 0,
        metric: Optional[str] = None,
    ):
        if hidden_dim % num_heads != 0:
            raise ValueError(f"hidden_dim {hidden_dim} is not divisible by num_heads {num_heads}")
        if num_classes not in (2, 3, 4):
            raise ValueError(f"num_classes must be 2, 3 or 4, got {num_classes}")
        if metric is not None:
            if metric not in METRICS:
                raise ValueError(f"Unknown metric '{metric}'")
            if len(METRICS[metric]) != num_classes:
                raise ValueError(
                    f"Metric {metric} has {len(METRICS[metric])} values, not {num_classes}"
                )
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        self.vocab_size = vocab_size
        self.num_classes = num_classes
        self.seq_len = seq_len
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.dropout_rate = dropout_rate
        self.seed = seed
        self.metric = metric

    @classmethod
    def from_preset(
        cls,
        preset: str,
        vocab_size: int,
        metric: str,
        seq_len: int = DEFAULT_SEQ_LEN,
        seed: int = 0,
        dropout_rate: float = 0.1,
    ) -> "ModelConfig":
        if preset not in PRESETS:
            raise ValueError(f"Unknown preset '{preset}'. Must be one of: {', '.join(PRESETS)}")
        return cls(
            vocab_size=vocab_size,
            num_classes=len(METRICS[metric]),
            seq_len=seq_len,
            dropout_rate=dropout_rate,
            seed=seed,
            metric=metric,
            **PRESETS[preset],
        )

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        return cls(**data)


def truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float = INIT_STD) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


def init_parameters(config: ModelConfig) -> Dict[str, np.ndarray]:
    """Seeded initialization: truncated normal weights, zero biases, unit norms."""
    rng = np.random.default_rng(config.seed)
    h, f = config.hidden_dim, config.ffn_dim
    params: Dict[str, np.ndarray] = {}

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        params[f"{name}.weight"] = truncated_normal(rng, (fan_in, fan_out))
        params[f"{name}.bias"] = np.zeros(fan_out)

    def norm(name: str) -> None:
        params[f"{name}.gamma"] = np.ones(h)
        params[f"{name}.beta"] = np.zeros(h)

    params["embeddings.token"] = truncated_normal(rng, (config.vocab_size, h))
    params["embeddings.position"] = truncated_normal(rng, (config.seq_len, h))
    norm("embeddings.norm")
    for i in range(config.num_layers):
        prefix = f"layers.{i}"
        for proj in ("query", "key", "value", "output"):
            linear(f"{prefix}.attention.{proj}", h, h)
        norm(f"{prefix}.attention_norm")
        linear(f"{prefix}.ffn.intermediate", h, f)
        linear(f"{prefix}.ffn.output", f, h)
        norm(f"{prefix}.ffn_norm")
    linear("classifier", h, config.num_classes)
    return params


class EncoderClassifier:
    """One per-metric classifier."""

    def __init__(
        self,
        config: ModelConfig,
        params: Optional[Dict[str, np.ndarray]] = None,
        vocab_digest: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.config = config
        arrays = params if params is not None else init_parameters(config)
        self.params: Dict[str, Tensor] = {
            name: Tensor(value, requires_grad=True, name=name) for name, value in arrays.items()
        }
        self.vocab_digest = vocab_digest
        self.metadata = metadata or {}

    @property
    def metric(self) -> Optional[str]:
        return self.config.metric

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def encoder_names(self) -> List[str]:
        return [name for name in self.params if not name.startswith(HEAD_PREFIX)]

    def head_names(self) -> List[str]:
        return [name for name in self.params if name.startswith(HEAD_PREFIX)]

    def set_encoder_frozen(self, frozen: bool) -> None:
        for name in self.encoder_names():
            self.params[name].requires_grad = not frozen

    def encoder_digest(self) -> str:
        return digest_arrays(self.params[name].data for name in sorted(self.encoder_names()))

    def parameter_digest(self) -> str:
        return digest_arrays(self.params[name].data for name in sorted(self.params))

    # Forward pass

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.ndim != 2 or ids.shape[1] != self.config.seq_len:
            raise ShapeMismatch("forward", ids.shape, (ids.shape[0] if ids.ndim else 0, self.config.seq_len))
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise VocabMismatch(
                f"Token id {int(ids.max())} outside the model vocabulary of {self.config.vocab_size}"
            )

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        """Token embeddings X of shape (batch, seq_len, hidden)."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        self._check_ids(ids)
        return embedding_lookup(self.params["embeddings.token"], ids)

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return add(matmul(x, self.params[f"{name}.weight"]), self.params[f"{name}.bias"])

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return layer_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"])

    def _attention(
        self, x: Tensor, prefix: str, additive_mask: Tensor
    ) -> Tuple[Tensor, np.ndarray]:
        batch, seq_len, hidden = x.shape
        heads = self.config.num_heads
        width = hidden // heads

        def split_heads(t: Tensor) -> Tensor:
            return transpose(reshape(t, (batch, seq_len, heads, width)), (0, 2, 1, 3))

        q = split_heads(self._linear(x, f"{prefix}.query"))
        k = split_heads(self._linear(x, f"{prefix}.key"))
        v = split_heads(self._linear(x, f"{prefix}.value"))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(width))
        weights = softmax(add(scores, additive_mask), axis=-1)
        context = transpose(matmul(weights, v), (0, 2, 1, 3))
        context = reshape(context, (batch, seq_len, hidden))
        return self._linear(context, f"{prefix}.output"), weights.data

    def forward_from_embeddings(
        self,
        token_embeddings: Tensor,
        mask: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, List[np.ndarray]]:
        """Run the encoder on given token embeddings.

        Returns logits (batch, num_classes) and one attention array
        (batch, heads, seq_len, seq_len) per layer. Dropout is active only
        when an rng is passed.
        """
        mask = np.atleast_2d(np.asarray(mask))
        if token_embeddings.shape[:2] != mask.shape:
            raise ShapeMismatch("forward", token_embeddings.shape, mask.shape)
        seq_len = mask.shape[1]
        rate = self.config.dropout_rate

        positions = slice_(self.params["embeddings.position"], slice(0, seq_len))
        x = self._norm(add(token_embeddings, positions), "embeddings.norm")
        additive = Tensor(np.where(mask > 0, 0.0, MASK_VALUE)[:, None, None, :])

        attention_maps = []
        for i in range(self.config.num_layers):
            prefix = f"layers.{i}"
            attended, weights = self._attention(x, f"{prefix}.attention", additive)
            attention_maps.append(weights)
            x = self._norm(add(x, dropout(attended, rate, rng)), f"{prefix}.attention_norm")
            hidden = gelu(self._linear(x, f"{prefix}.ffn.intermediate"))
            ffn_out = self._linear(hidden, f"{prefix}.ffn.output")
            x = self._norm(add(x, dropout(ffn_out, rate, rng)), f"{prefix}.ffn_norm")

        cls = slice_(x, (slice(None), 0, slice(None)))
        return self._linear(cls, "classifier"), attention_maps

    def forward_batch(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, List[np.ndarray]]:
        return self.forward_from_embeddings(self.embed_tokens(ids), mask, rng)

    def forward(self, seq: TokenSequence) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Logits (num_classes,) and per-layer attention maps for one sequence."""
        logits, maps = self.forward_batch(np.array([seq.ids]), np.array([seq.mask]))
        return logits.data[0], [m[0] for m in maps]

    def predict(self, seq: TokenSequence) -> Tuple[int, float]:
        return predict_from_logits(self.forward(seq)[0])

    def predict_batch(self, sequences: Sequence[TokenSequence], batch_size: int = 64) -> List[Tuple[int, float]]:
        results: List[Tuple[int, float]] = []
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start:start + batch_size]
            logits, _ = self.forward_batch(
                np.array([s.ids for s in chunk]), np.array([s.mask for s in chunk])
            )
            results.extend(predict_from_logits(row) for row in logits.data)
        return results

    # Checkpoints

    def to_checkpoint(self, metadata: Optional[Dict[str, Any]] = None) -> "ModelCheckpoint":
        merged = dict(self.metadata)
        merged.update(metadata or {})
        return ModelCheckpoint(
            self.config,
            {name: t.data.copy() for name, t in self.params.items()},
            self.vocab_digest,
            merged,
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: "ModelCheckpoint") -> "EncoderClassifier":
        return cls(checkpoint.config, checkpoint.params, checkpoint.vocab_digest, checkpoint.metadata)


def predict_from_logits(logits: np.ndarray) -> Tuple[int, float]:
    """Argmax class (lowest index on ties) and its softmax probability."""
    probs = softmax_array(np.asarray(logits, dtype=np.float64))
    best = int(np.argmax(probs))
    return best, float(probs[best])


def loss(logits: Tensor, target: int) -> Tensor:
    """Cross-entropy of one target class."""
    return cross_entropy(logits, [target])


# Checkpoint container: magic line, 8-byte little-endian header length,
# JSON header, then little-endian float64 tensor blocks in header order.
CHECKPOINT_MAGIC = b"VULNSCORE-CHECKPOINT\n"
CHECKPOINT_VERSION = 1


class ModelCheckpoint:
    """Serialized weights, configuration and provenance of one classifier."""

    def __init__(
        self,
        config: ModelConfig,
        params: Dict[str, np.ndarray],
        vocab_digest: Optional[str],
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.config = config
        self.params = params
        self.vocab_digest = vocab_digest
        self.metadata = metadata or {}

    def to_bytes(self) -> bytes:
        manifest = []
        blocks = []
        offset = 0
        for name, array in self.params.items():
            block = np.ascontiguousarray(array, dtype="<f8").tobytes()
            manifest.append({"name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(block)})
            blocks.append(block)
            offset += len(block)
        payload = b"".join(blocks)
        header = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "tensors": manifest,
            "vocab_digest": self.vocab_digest,
            "metadata": self.metadata,
            "payload_sha256": sha256_hex(payload),
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        return CHECKPOINT_MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + payload

    @classmethod
    def from_bytes(cls, data: bytes, path: str = "<memory>") -> "ModelCheckpoint":
        if not data.startswith(CHECKPOINT_MAGIC):
            raise CorruptCheckpoint(path, "not a vulnscore checkpoint")
        cursor = len(CHECKPOINT_MAGIC)
        if len(data) < cursor + 8:
            raise CorruptCheckpoint(path, "truncated header length")
        (header_len,) = struct.unpack("<Q", data[cursor:cursor + 8])
        cursor += 8
        if len(data) < cursor + header_len:
            raise CorruptCheckpoint(path, "truncated header")
        try:
            header = json.loads(data[cursor:cursor + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptCheckpoint(path, f"unreadable header ({e})") from e
        cursor += header_len

        version = header.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(path, version, CHECKPOINT_VERSION)
        payload = data[cursor:]
        if sha256_hex(payload) != header.get("payload_sha256"):
            raise CorruptCheckpoint(path, "payload digest does not match (truncated or altered)")

        params: Dict[str, np.ndarray] = {}
        try:
            for entry in header["tensors"]:
                start, nbytes = entry["offset"], entry["nbytes"]
                block = np.frombuffer(payload[start:start + nbytes], dtype="<f8")
                params[entry["name"]] = block.astype(np.float64).reshape(entry["shape"])
            config = ModelConfig.from_dict(header["config"])
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptCheckpoint(path, f"inconsistent manifest ({e})") from e
        return cls(config, params, header.get("vocab_digest"), header.get("metadata") or {})


def save_checkpoint(path: Union[str, Path], checkpoint: ModelCheckpoint) -> None:
    atomic_write_bytes(Path(path), checkpoint.to_bytes())
    logger.info("saved %s checkpoint to %s", checkpoint.config.metric, path)


def load_checkpoint(path: Union[str, Path]) -> ModelCheckpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise StorageError(f"Cannot read checkpoint {path}: {e}") from e
    return ModelCheckpoint.from_bytes(data, str(path))


def predict_sequences(classifier: Any, sequences: Sequence[TokenSequence]) -> List[Tuple[int, float]]:
    """Predict many sequences, batching when the classifier supports it."""
    if hasattr(classifier, "predict_batch"):
        return classifier.predict_batch(sequences)
    return [classifier.predict(seq) for seq in sequences]
