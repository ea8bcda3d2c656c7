"""Atomic, reproducible result files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(value: Any) -> str:
    """Full-precision text for a CSV cell: 17 significant digits for floats."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    if isinstance(value, (list, tuple)):
        return ";".join(fmt(v) for v in value)
    return "" if value is None else str(value)


def display(value: float, se: float | None = None, digits: int = 4) -> str:
    """Rounded human-readable summary, e.g. ``0.2466 +- 0.0002``."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    if se is None or not math.isfinite(se):
        return f"{value:.{digits}g}"
    return f"{value:.{digits}g} +- {se:.2g}"


def csv_text(header: Mapping[str, Any], columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    for key, value in header.items():
        buf.write(f"# {key}={fmt(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, header: Mapping[str, Any], columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    return atomic_write_text(path, csv_text(header, columns, rows))


def _json_default(obj: Any):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _json_safe(obj: Any):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path: str | Path, record: Any) -> Path:
    return atomic_write_text(path, json.dumps(_json_safe(record), indent=2, sort_keys=True, default=_json_default) + "\n")


def read_csv(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Inverse of :func:`write_csv`: (header key/values, rows as string dicts)."""
    header: dict[str, str] = {}
    lines = Path(path).read_text().splitlines()
    body = []
    for line in lines:
        if line.startswith("# ") and "=" in line and not body:
            k, v = line[2:].split("=", 1)
            header[k] = v
        else:
            body.append(line)
    return header, list(csv.DictReader(body))
