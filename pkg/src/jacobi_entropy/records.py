"""Deterministic text records: versioned CSV and flat key-value files, written atomically."""

from __future__ import annotations

import math
import os
import tempfile

SCHEMA = 1


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        # float() strips numpy scalar types, whose repr is not a plain literal
        return repr(float(v))
    try:
        import numpy as np

        if isinstance(v, np.integer):
            return str(int(v))
        if isinstance(v, np.floating):
            return format_value(float(v))
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def atomic_write_bytes(path, payload: bytes):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="-" + os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(columns, rows, comment: str = "") -> str:
    head = f"# schema={SCHEMA}" + (f" {comment}" if comment else "")
    lines = [head, ",".join(columns)]
    lines += [",".join(format_value(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_csv(path, columns, rows, comment: str = ""):
    atomic_write_text(path, csv_text(columns, rows, comment))


def kv_text(mapping) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in mapping.items())


def write_kv(path, mapping):
    atomic_write_text(path, kv_text(mapping))


def read_csv(path):
    """``(columns, rows)`` with rows as lists of strings; comment lines skipped."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    columns = lines[0].split(",")
    return columns, [ln.split(",") for ln in lines[1:]]
