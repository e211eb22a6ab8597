"""Common utilities for anchorsum stages and handlers."""

import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, List, Sequence, Tuple, TypeVar

from anchorsum.errors import BackendError

T = TypeVar("T")

logger = logging.getLogger(__name__)

PIPELINE_STAGES = ("ingest", "stage1", "stage2", "stage3", "score")


def sha256_bytes(data: bytes) -> str:
    """Hex SHA-256 digest of raw bytes."""
    return hashlib.sha256(data).hexdigest()


def sha256_text(text: str) -> str:
    """Hex SHA-256 digest of UTF-8 text."""
    return sha256_bytes(text.encode("utf-8"))


def sha256_file(path: Path) -> str:
    """Hex SHA-256 digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(data: Any) -> str:
    """Compact, key-sorted JSON used for digests."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def validate_stage(stage: str) -> Tuple[bool, str]:
    """
    Validate a pipeline stage name.

    Returns:
        Tuple[bool, str]: (is_valid, error_message)
    """
    if stage in PIPELINE_STAGES:
        return True, ""
    return False, f"Stage '{stage}' not found. Available stages: {', '.join(PIPELINE_STAGES)}"


def batched(items: Sequence[T], size: int) -> Iterator[List[T]]:
    """Yield consecutive chunks of at most ``size`` items."""
    for start in range(0, len(items), size):
        yield list(items[start:start + size])


def ordered_unique(items: Iterable[T]) -> List[T]:
    """Deduplicate while keeping first-seen order."""
    seen = set()
    result = []
    for item in items:
        if item not in seen:
            seen.add(item)
            result.append(item)
    return result


def call_with_retry(fn: Callable[[], T], attempts: int, backoff_s: float, what: str) -> T:
    """
    Call ``fn`` until it succeeds, retrying retryable BackendErrors.

    The wait doubles after each failed attempt, starting at ``backoff_s``.
    """
    delay = backoff_s
    for attempt in range(1, attempts + 1):
        try:
            return fn()
        except BackendError as e:
            if not e.retryable or attempt == attempts:
                raise
            logger.warning(f"{what}: attempt {attempt}/{attempts} failed ({e}); retrying in {delay:g}s")
            time.sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")
