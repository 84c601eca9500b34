"""Plain-text field snapshots.

Layout (version 1)::

    # ekplab-snapshot 1
    # dim=1 n=128 time=0.5 epsilon=0.1
    rho,m_x,r
    1.0,0.0,1.0
    ...

The two comment lines are mandatory and fixed in order.  The third line names
the columns; every following line is one grid node in row-major (C) order,
floats written with ``repr`` so they round-trip exactly.  Columns other than
``rho`` are optional.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid

MAGIC = "# ekplab-snapshot 1"


@dataclass
class Snapshot:
    grid: Grid
    time: float
    fields: dict
    meta: dict = field(default_factory=dict)


def _format_meta(meta: dict) -> str:
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in meta.items())


def dumps(snap: Snapshot) -> str:
    if "rho" not in snap.fields:
        raise ValueError("a snapshot needs a 'rho' column")
    meta = {"dim": snap.grid.dim, "n": snap.grid.n, "time": float(snap.time), **snap.meta}
    names = list(snap.fields)
    cols = [snap.grid.check_scalar(snap.fields[k]).ravel() for k in names]
    buf = io.StringIO()
    buf.write(MAGIC + "\n")
    buf.write("# " + _format_meta(meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*cols):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_snapshot(path, snap: Snapshot) -> Path:
    path = Path(path)
    path.write_text(dumps(snap))
    return path


def loads(text: str) -> Snapshot:
    lines = text.splitlines()
    if len(lines) < 3 or lines[0].strip() != MAGIC:
        raise ValueError("not an ekplab snapshot (bad magic line)")
    if not lines[1].startswith("# "):
        raise ValueError("missing metadata line")
    meta = {}
    for item in lines[1][2:].split():
        key, _, value = item.partition("=")
        meta[key] = value
    try:
        grid = Grid(int(meta.pop("dim")), int(meta.pop("n")))
        time = float(meta.pop("time"))
    except KeyError as exc:
        raise ValueError(f"metadata lacks {exc}") from None
    reader = csv.reader(lines[2:])
    names = next(reader)
    data = np.array([[float(v) for v in row] for row in reader if row])
    if data.shape != (grid.n**grid.dim, len(names)):
        raise ValueError(f"expected {grid.n ** grid.dim} rows of {len(names)} values")
    fields = {k: data[:, j].reshape(grid.shape) for j, k in enumerate(names)}
    return Snapshot(grid, time, fields, meta)


def read_snapshot(path) -> Snapshot:
    return loads(Path(path).read_text())
