"""Append-only replay buffer with a JSON-lines file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import InputError, NotFoundError, ParseError


@dataclass(frozen=True, eq=False)
class Transition:
    state: np.ndarray
    symbol: float | None
    action: np.ndarray
    next_state: np.ndarray
    episode: int = 0
    step: int = 0

    def __post_init__(self):
        s = np.array(self.state, dtype=np.float64).reshape(-1)
        s2 = np.array(self.next_state, dtype=np.float64).reshape(-1)
        a = np.array(self.action, dtype=np.float64).reshape(-1)
        if s.shape != s2.shape:
            raise InputError(f"state and next_state dimensions differ: {s.size} vs {s2.size}")
        for arr in (s, s2, a):
            arr.setflags(write=False)
        object.__setattr__(self, "state", s)
        object.__setattr__(self, "next_state", s2)
        object.__setattr__(self, "action", a)
        if self.symbol is not None:
            object.__setattr__(self, "symbol", float(self.symbol))

    def with_symbol(self, symbol: float | None) -> "Transition":
        return Transition(self.state, symbol, self.action, self.next_state, self.episode, self.step)

    def to_record(self) -> dict:
        rec = {"episode": self.episode, "step": self.step, "s": self.state.tolist()}
        if self.symbol is not None:
            rec["theta"] = self.symbol
        rec["a"] = self.action.tolist()
        rec["s_next"] = self.next_state.tolist()
        return rec

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (np.array_equal(self.state, other.state) and self.symbol == other.symbol
                and np.array_equal(self.action, other.action)
                and np.array_equal(self.next_state, other.next_state)
                and self.episode == other.episode and self.step == other.step)

    __hash__ = None


def _vector(rec, key, lineno) -> np.ndarray:
    v = rec.get(key)
    if not isinstance(v, list) or not v:
        raise ParseError(f"field {key!r} must be a nonempty list of numbers", f"line {lineno}")
    if not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in v):
        raise ParseError(f"field {key!r} must contain only numbers", f"line {lineno}")
    arr = np.array(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"field {key!r} contains non-finite values", f"line {lineno}")
    return arr


def parse_record(line: str, lineno: int) -> Transition:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {lineno}") from None
    if not isinstance(rec, dict):
        raise ParseError("record must be an object", f"line {lineno}")
    ints = {}
    for key in ("episode", "step"):
        v = rec.get(key, 0)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"field {key!r} must be an integer", f"line {lineno}")
        ints[key] = v
    theta = rec.get("theta")
    if theta is not None and (isinstance(theta, bool) or not isinstance(theta, (int, float))
                              or not math.isfinite(theta)):
        raise ParseError("field 'theta' must be a finite number", f"line {lineno}")
    s, s2 = _vector(rec, "s", lineno), _vector(rec, "s_next", lineno)
    if s.shape != s2.shape:
        raise ParseError("fields 's' and 's_next' differ in length", f"line {lineno}")
    return Transition(s, theta, _vector(rec, "a", lineno), s2, ints["episode"], ints["step"])


class ReplayBuffer:
    """Append-only transition store; ``capacity`` drops the oldest records."""

    def __init__(self, transitions: Iterable[Transition] = (), capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise InputError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        for t in transitions:
            self.append(t)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, t: Transition) -> None:
        if self._items:
            ref = self._items[0]
            if t.state.size != ref.state.size or t.action.size != ref.action.size:
                raise InputError("transition dimensions differ from the buffer's")
        self._items.append(t)
        if self.capacity is not None and len(self._items) > self.capacity:
            del self._items[0]

    def extend(self, ts: Iterable[Transition]) -> None:
        for t in ts:
            self.append(t)

    def relabel(self, indices, symbol: float) -> None:
        for i in indices:
            self._items[i] = self._items[i].with_symbol(symbol)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(states, symbols, actions, next_states)``; missing symbols are nan."""
        if not self._items:
            raise InputError("replay buffer is empty")
        s = np.stack([t.state for t in self._items])
        th = np.array([np.nan if t.symbol is None else t.symbol for t in self._items])
        a = np.stack([t.action for t in self._items])
        s2 = np.stack([t.next_state for t in self._items])
        return s, th, a, s2

    def symbol_counts(self) -> dict[float, int]:
        counts: dict[float, int] = {}
        for t in self._items:
            if t.symbol is not None:
                counts[t.symbol] = counts.get(t.symbol, 0) + 1
        return counts

    def write_jsonl(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w") as fh:
            for t in self._items:
                fh.write(json.dumps(t.to_record()) + "\n")

    @classmethod
    def read_jsonl(cls, path, capacity: int | None = None) -> "ReplayBuffer":
        p = Path(path)
        if not p.is_file():
            raise NotFoundError(f"replay buffer file not found: {p}")
        buf = cls(capacity=capacity)
        with open(p) as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.strip():
                    t = parse_record(line, lineno)
                    try:
                        buf.append(t)
                    except InputError as exc:
                        raise ParseError(str(exc), f"line {lineno}") from None
        return buf


def sample_weight(buffer: ReplayBuffer, symbol: float) -> float:
    """``|R| / count(theta)``."""
    count = buffer.symbol_counts().get(float(symbol), 0)
    if count == 0:
        raise InputError(f"symbol {symbol!r} does not occur in the buffer")
    return len(buffer) / count


def symbol_weights(symbols: np.ndarray) -> np.ndarray:
    """Per-record ``|R| / count(theta)`` for an array of symbols."""
    symbols = np.asarray(symbols, dtype=np.float64)
    if symbols.size == 0:
        raise InputError("no symbols given")
    _, inverse, counts = np.unique(symbols, return_inverse=True, return_counts=True)
    return symbols.size / counts[inverse].astype(np.float64)
