"""CSV read/write helpers with reproducible float formatting.

All floats are printed with 17 significant digits so that files round-trip
bit-exactly and repeated runs are byte-identical.
"""

from __future__ import annotations

import numpy as np


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_table(path, names, columns, comment: str | None = None) -> None:
    """Write named columns as CSV. ``comment``, if given, becomes a '#' first line."""
    columns = [np.asarray(c, dtype=float) for c in columns]
    n = len(columns[0])
    if any(len(c) != n for c in columns):
        raise ValueError("columns must share a common length")
    lines = []
    if comment is not None:
        lines.append("# " + comment)
    lines.append(",".join(names))
    for i in range(n):
        lines.append(",".join(fmt(c[i]) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path):
    """Read a CSV written by :func:`write_table`.

    Returns ``(comment, names, columns)`` where ``columns`` maps each header
    name to a float array and ``comment`` is the '#' line (without marker)
    or ``None``.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    comment = None
    if lines and lines[0].startswith("#"):
        comment = lines[0].lstrip("#").strip()
        lines = lines[1:]
    if not lines:
        raise ValueError(f"{path}: empty table")
    names = [c.strip() for c in lines[0].split(",")]
    rows = [ln.split(",") for ln in lines[1:]]
    if any(len(r) != len(names) for r in rows):
        raise ValueError(f"{path}: ragged rows")
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
    return comment, names, {name: data[:, j] for j, name in enumerate(names)}


def parse_comment_fields(comment: str) -> dict:
    """Parse ``key=value`` pairs from a profile metadata comment."""
    out = {}
    for tok in comment.split():
        if "=" in tok:
            key, val = tok.split("=", 1)
            out[key] = val
    return out
