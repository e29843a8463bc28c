"""Trace CSV and report JSON serialization with atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

from .engine import TraceRecord, TrainingTrace
from .errors import TraceSchemaError

TRACE_SCHEMA_VERSION = 1
COLUMNS = TraceRecord._fields
_INT_COLUMNS = {"global_iter", "worker", "staleness"}


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def trace_to_csv(trace: TrainingTrace, config_sha256: str) -> str:
    buf = io.StringIO()
    header = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "config_sha256": config_sha256,
        "seed": trace.seed,
        "mode": trace.mode,
        "n_workers": trace.n_workers,
        "iterations": trace.iterations,
    }
    for key, value in header.items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in trace.records:
        writer.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_trace(path, trace: TrainingTrace, config_sha256: str) -> Path:
    return atomic_write_text(path, trace_to_csv(trace, config_sha256))


def read_trace(path) -> tuple[dict, list[TraceRecord]]:
    """Parse a trace file into its header and records.

    Raises:
        TraceSchemaError: missing or unsupported ``schema_version``, or unexpected columns.
    """
    header: dict[str, str] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition("=")
        header[key] = value
        i += 1
    version = header.get("schema_version")
    if version is None:
        raise TraceSchemaError(f"{path}: no schema_version in header")
    if version != str(TRACE_SCHEMA_VERSION):
        raise TraceSchemaError(
            f"{path}: trace schema version {version} unsupported (expected {TRACE_SCHEMA_VERSION})"
        )
    reader = csv.reader(lines[i:])
    cols = tuple(next(reader, ()))
    if cols != COLUMNS:
        raise TraceSchemaError(f"{path}: unexpected columns {cols}")
    records = []
    for row in reader:
        values = [int(v) if c in _INT_COLUMNS else (v if c == "event" else float(v)) for c, v in zip(cols, row)]
        records.append(TraceRecord(*values))
    return header, records


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def write_report(path, report: dict) -> Path:
    """JSON report; non-finite floats become ``null``."""
    return atomic_write_text(path, json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
