"""
Persistence for per-trial simulation results.

Each finished trial is written to its own JSON file so an interrupted
experiment resumes where it stopped. Pure file I/O: callers decide what a
record holds and handle any reporting.
"""

import json
import os
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple


TRIAL_DIR_NAME = "trials"


class TrialStoreError(Exception):
    """Raised when a trial file cannot be read or written."""


def trial_file_name(kind: str, M: int, trial: int) -> str:
    """File name of one trial unit, e.g. ``ar2-linear__M1__t007.json``."""
    return f"{kind}__M{M}__t{trial:03d}.json"


def trial_path(out_dir: str, kind: str, M: int, trial: int) -> str:
    return os.path.join(out_dir, TRIAL_DIR_NAME, trial_file_name(kind, M, trial))


def read_trial(trial_file: str) -> Optional[Dict]:
    """
    Read one trial file.

    Parameters
    ----------
    trial_file : str
        Path to the trial JSON file.

    Returns
    -------
    Optional[Dict]
        Parsed record, or None if the file does not exist.

    Raises
    ------
    TrialStoreError
        If the file exists but cannot be read or parsed.
    """
    path = Path(trial_file)
    if not path.exists():
        return None

    try:
        with open(path, 'r', encoding='utf-8') as handle:
            record = json.load(handle)
    except (json.JSONDecodeError, OSError) as e:
        raise TrialStoreError(f"Error loading trial {path.name}: {e}") from e
    if not isinstance(record, dict):
        raise TrialStoreError(f"Trial {path.name} does not hold a JSON object")
    return record


def write_trial(trial_file: str, record: Dict) -> None:
    """
    Write one trial record, replacing the file atomically.

    Raises
    ------
    TrialStoreError
        If the file cannot be written.
    """
    path = Path(trial_file)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, 'w', encoding='utf-8') as handle:
            json.dump(record, handle, indent=2, ensure_ascii=False)
        os.replace(tmp, path)
    except OSError as e:
        raise TrialStoreError(f"Error saving trial {path.name}: {e}") from e


def load_done(trial_file: str) -> Tuple[Optional[Dict], str]:
    """
    Return a stored trial if it can be reused.

    Returns
    -------
    Tuple[Optional[Dict], str]
        The record (or None) and a short reason it was rejected, for logging.
    """
    try:
        record = read_trial(trial_file)
    except TrialStoreError as e:
        # Unreadable files are recomputed.
        return None, str(e)
    if record is None:
        return None, "not run"
    if not isinstance(record.get("results"), list):
        return None, "incomplete record"
    return record, "ok"


def iter_trials(out_dir: str) -> Iterator[Dict]:
    """Yield every readable trial record under ``out_dir`` in file-name order."""
    trial_dir = Path(out_dir) / TRIAL_DIR_NAME
    if not trial_dir.is_dir():
        return
    for path in sorted(trial_dir.glob("*.json")):
        record, _ = load_done(str(path))
        if record is not None:
            yield record
