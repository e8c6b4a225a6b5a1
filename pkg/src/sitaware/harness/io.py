"""CSV traces and run artifacts.

Floats are written with ``repr`` so every value read back is bit-identical to
the one computed during the run.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..errors import NotFoundError, ParseError

DETECTOR_COLUMNS = ["episode", "step", "changepoint", "log_growth", "log_change", "map_run_length",
                    "situation_id", "symbol", "distance", "created"]
GROUND_TRUTH_COLUMNS = ["episode", "step", "old_regime", "new_regime"]
REWARD_COLUMNS = ["episode", "reward", "waypoints", "steps"]


def step_columns(action_dim: int, target_dim: int) -> list[str]:
    """Per-step trace: predicted mean and variance of the transition target next to the realized one."""
    return (["episode", "step", "regime", "symbol", "reward", "waypoint", "expected_cost"]
            + [f"a{i}" for i in range(action_dim)]
            + [f"pred{i}" for i in range(target_dim)]
            + [f"var{i}" for i in range(target_dim)]
            + [f"real{i}" for i in range(target_dim)])


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class CsvTrace:
    """One CSV file: the header is written on creation, rows are appended on flush."""

    def __init__(self, path, columns: list[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self._rows: list[list[str]] = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(self.columns)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"{self.path.name}: expected {len(self.columns)} values, got {len(values)}")
        self._rows.append([fmt(v) for v in values])

    def flush(self) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self._rows)
        self._rows = []


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns as float arrays; empty cells become NaN."""
    p = Path(path)
    if not p.is_file():
        raise NotFoundError(f"trace not found: {p}")
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty CSV file", str(p))
    header, body = rows[0], rows[1:]
    cols = {h: [] for h in header}
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", f"{p}: line {lineno}")
        for h, v in zip(header, row):
            try:
                cols[h].append(float(v) if v != "" else math.nan)
            except ValueError:
                raise ParseError(f"column {h!r}: not a number: {v!r}", f"{p}: line {lineno}") from None
    return {h: np.array(v, dtype=np.float64) for h, v in cols.items()}


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_stream_csv(path) -> np.ndarray:
    """A numeric CSV stream, one observation per row.  A non-numeric first row is a header."""
    p = Path(path)
    if not p.is_file():
        raise NotFoundError(f"stream file not found: {p}")
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError("stream file holds no rows", str(p))
    start = 0
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        start = 1
    out = []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != len(rows[start]):
            raise ParseError(f"expected {len(rows[start])} fields, got {len(row)}", f"{p}: line {lineno}")
        try:
            out.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(str(exc), f"{p}: line {lineno}") from None
    if not out:
        raise ParseError("stream file holds no observations", str(p))
    return np.array(out, dtype=np.float64)
