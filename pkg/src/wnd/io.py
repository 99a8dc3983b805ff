"""CSV emission with a fixed schema and round-trip exact floats."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["SchemaError", "emit_csv", "read_csv", "format_value"]


class SchemaError(RuntimeError):
    """Records do not match the declared column list (a bug, not bad input)."""


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def emit_csv(records, schema, dest) -> Path:
    """Write ``records`` (mappings or sequences) under header ``schema``.

    Floats are printed with 17 significant digits so parsing returns the
    identical double; lines end in a bare newline.
    """
    schema = list(schema)
    dest = Path(dest)
    rows = []
    for r in records:
        if isinstance(r, dict):
            if set(r) != set(schema):
                raise SchemaError(f"record keys {sorted(r)} do not match schema {schema}")
            r = [r[k] for k in schema]
        else:
            r = list(r)
            if len(r) != len(schema):
                raise SchemaError(f"record of length {len(r)} for schema of {len(schema)} columns")
        rows.append([format_value(v) for v in r])
    with dest.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(schema)
        wr.writerows(rows)
    return dest


def read_csv(src) -> tuple:
    """``(header, rows)`` with every cell left as a string."""
    with Path(src).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, list(rd)
