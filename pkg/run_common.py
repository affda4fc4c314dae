"""
Shared helpers used by the engine, the simulation harness, and the CLI.

Exit codes, fit retry pacing, progress reporting, file digests and output
validation.
"""

import hashlib
import json
import os
from functools import lru_cache
from typing import Any, Callable, Dict, Optional

import jsonschema

from config_loader import get_app_dir


TOOL_VERSION = "1.0.0"

# Exit codes are a stable contract for scripts wrapping the CLI.
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FIT_FAILURE = 3

# A failed fit at a refit point is retried once with a longer warmup.
FIT_MAX_RETRIES = 1
WARMUP_RETRY_FACTOR = 2

# Read size for hashing input files without loading them into memory.
DIGEST_CHUNK_SIZE = 1024 * 1024

SCHEMA_DIR_NAME = "schemas"

ProgressCallback = Callable[[int, Optional[int]], None]


class OutputSchemaError(ValueError):
    """Raised when a document does not match its published schema."""


class ProgressReporter:
    """
    Counts finished work units and reports them to an optional callback.

    The callback is dropped after its first failure.
    """

    def __init__(self, total: Optional[int] = None,
                 progress_callback: Optional[ProgressCallback] = None):
        """
        Parameters
        ----------
        total : int, optional
            Number of units expected, passed through to the callback.
        progress_callback : Callable[[int, Optional[int]], None], optional
            Called after each unit with (units_done, total).
        """
        self.total = total
        self.progress_callback = progress_callback
        self.done = 0

    def advance(self, units: int = 1) -> None:
        """Record finished units and notify the callback."""
        self.done += units
        if not self.progress_callback:
            return
        try:
            self.progress_callback(self.done, self.total)
        except Exception:  # pylint: disable=broad-except
            self.progress_callback = None


def file_digest(file_path: str) -> Optional[str]:
    """
    Compute a file's SHA-256 digest.

    Returns
    -------
    Optional[str]
        Lowercase hex digest, or None if the file could not be read.
    """
    digest = hashlib.sha256()
    try:
        with open(file_path, 'rb') as handle:
            for chunk in iter(lambda: handle.read(DIGEST_CHUNK_SIZE), b''):
                digest.update(chunk)
    except OSError:
        return None
    return digest.hexdigest()


@lru_cache(maxsize=None)
def load_schema(name: str) -> Dict[str, Any]:
    """Load ``schemas/<name>.schema.json`` shipped beside the application."""
    path = os.path.join(get_app_dir(), SCHEMA_DIR_NAME, f"{name}.schema.json")
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def validate_document(document: Dict[str, Any], schema_name: str) -> None:
    """
    Check a JSON-ready document against its published schema.

    Raises
    ------
    OutputSchemaError
        If the document does not validate.
    """
    try:
        jsonschema.validate(document, load_schema(schema_name))
    except jsonschema.ValidationError as e:
        raise OutputSchemaError(
            f"{schema_name} document failed validation: {e.message}"
        ) from e


def write_json(path: str, document: Dict[str, Any],
               schema_name: Optional[str] = None) -> None:
    """Validate (when a schema is named) and write a JSON document."""
    if schema_name:
        validate_document(document, schema_name)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, indent=2, ensure_ascii=False)
        handle.write("\n")
