import hashlib
import os
from pathlib import Path
from typing import Any, Dict, List, Literal

from prefect.utilities import logging

from .exceptions import ValidationError

logger = logging.get_logger(__name__)


def file_sha256(path: str, chunk_size: int = 1 << 20) -> str:
    """Hex SHA-256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_files(paths: List[str]) -> Dict[str, str]:
    """Map every existing path to its SHA-256 digest; missing paths are skipped."""
    return {str(p): file_sha256(p) for p in paths if p and os.path.isfile(p)}


def ensure_parent_dir(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def handle_if_empty(
    is_empty: bool,
    if_empty: Literal["warn", "fail", "ignore"] = "warn",
    message: str = None,
) -> bool:
    """
    Handle an empty result according to the `if_empty` policy.

    Args:
        is_empty (bool): Whether the result is empty.
        if_empty (Literal, optional): What to do if it is. Defaults to "warn".
        message (str, optional): Message to log or raise with.

    Raises:
        ValidationError: If the result is empty and `if_empty` is "fail".

    Returns:
        bool: `is_empty`, for chaining.
    """
    if not is_empty:
        return False
    message = message or "Result is empty."
    if if_empty == "warn":
        logger.warning(message)
    elif if_empty == "fail":
        raise ValidationError(message)
    return True


def echo_value(value: Any) -> Any:
    """Convert numpy scalars and tuples into plain JSON-friendly values."""
    if hasattr(value, "item") and getattr(value, "shape", None) == ():
        return value.item()
    if isinstance(value, tuple):
        return [echo_value(v) for v in value]
    if isinstance(value, list):
        return [echo_value(v) for v in value]
    if isinstance(value, dict):
        return {str(k): echo_value(v) for k, v in value.items()}
    return value
