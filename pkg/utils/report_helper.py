# report_helper.py - JSON/CSV artifact writers shared by the CLI commands
import contextlib
import csv
import json
import logging
import math
import os
import shutil
import tempfile
from datetime import datetime, timezone
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from navattack import config

logger = logging.getLogger(__name__)


def json_safe(value: Any) -> Any:
    """Convert numpy scalars/arrays and infinities into plain JSON values ("inf" for infinity)."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def stamp(payload: dict) -> dict:
    """Attach format_version and the single timestamp field every report carries."""
    data = {"format_version": config.FORMAT_VERSION}
    data.update(payload)
    data["meta"] = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    return json_safe(data)


def write_json(path: str, payload: Any):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(json_safe(list(row)))


@contextlib.contextmanager
def atomic_directory(target: str) -> Iterator[str]:
    """Yield a temporary sibling directory that replaces target only if the block succeeds."""
    target = os.path.abspath(target)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=f".{os.path.basename(target)}.", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if os.path.isdir(target):
        shutil.rmtree(target)
    elif os.path.exists(target):
        os.remove(target)
    os.replace(tmp, target)
    os.chmod(target, 0o755)
    logger.debug("Committed %s", target)


@contextlib.contextmanager
def atomic_file(target: str) -> Iterator[str]:
    """Yield a temporary path in target's directory, renamed onto target on success."""
    target = os.path.abspath(target)
    os.makedirs(os.path.dirname(target), exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{os.path.basename(target)}.", dir=os.path.dirname(target))
    os.close(fd)
    try:
        yield tmp
    except BaseException:
        with contextlib.suppress(OSError):
            os.remove(tmp)
        raise
    os.replace(tmp, target)
