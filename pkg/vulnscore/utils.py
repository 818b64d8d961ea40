"""Utility functions for vulnscore."""

import hashlib
import json
import logging
from typing import Any, Iterable, Optional

from rich.console import Console
from rich.logging import RichHandler


PACKAGE_LOGGER = "vulnscore"


def canonical_json(payload: Any) -> str:
    """Deterministic JSON rendering used for every structured output."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def payload_digest(payload: Any) -> str:
    """Content hash of a JSON-serializable payload."""
    # Compact form so the digest does not depend on indentation choices
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return sha256_hex(text.encode("utf-8"))


def text_digest(text: str) -> str:
    return sha256_hex(text.encode("utf-8"))


def digest_arrays(arrays: Iterable[Any]) -> str:
    """Hash a sequence of numpy arrays by shape and little-endian float64 bytes."""
    h = hashlib.sha256()
    for array in arrays:
        h.update(repr(tuple(array.shape)).encode("ascii"))
        h.update(array.astype("<f8").tobytes())
    return h.hexdigest()


def setup_logging(verbosity: int = 0, console: Optional[Console] = None) -> logging.Logger:
    """Attach a rich handler to the package logger.

    0 shows warnings, 1 adds info, 2 or more adds debug output.
    """
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG

    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(
            console=console or Console(stderr=True),
            show_time=False,
            show_path=False,
            markup=False,
        )
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.propagate = False
    return logger
