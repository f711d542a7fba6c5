"""4:2 compressor cells stored as 5-in/3-out truth tables.

Inputs are packed as ``x1<<4 | x2<<3 | x3<<2 | x4<<1 | cin`` and every table
maps that 5-bit index to ``(sum, carry, cout)``.  The arithmetic weight of
the outputs is ``sum + 2*(carry + cout)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

POLARITIES = ("positive", "negative", "exact")

INPUTS = tuple(product((0, 1), repeat=5))


def pack(x1: int, x2: int, x3: int, x4: int, cin: int) -> int:
    return (x1 << 4) | (x2 << 3) | (x3 << 2) | (x4 << 1) | cin


def exact_compress(x1: int, x2: int, x3: int, x4: int, cin: int) -> tuple[int, int, int]:
    """Two cascaded full adders; ``cout`` never depends on ``cin``."""
    s1 = x1 ^ x2 ^ x3
    cout = (x1 & x2) | (x1 & x3) | (x2 & x3)
    total_sum = s1 ^ x4 ^ cin
    carry = (s1 & x4) | (s1 & cin) | (x4 & cin)
    return total_sum, carry, cout


def _positive_cell(x1, x2, x3, x4, cin):
    # sum is forced high when exactly two of x1..x4 are set and cin is low:
    # only ever over-estimates, by one.
    s, c, co = exact_compress(x1, x2, x3, x4, cin)
    if x1 + x2 + x3 + x4 == 2 and not cin:
        s = 1
    return s, c, co


def _negative_cell(x1, x2, x3, x4, cin):
    # complement dual of the positive cell, so every error flips sign
    s, c, co = _positive_cell(1 - x1, 1 - x2, 1 - x3, 1 - x4, 1 - cin)
    return 1 - s, 1 - c, 1 - co


@dataclass(frozen=True)
class ErrorProfile:
    error_rate: float
    mean_signed_error: float
    direction: str


@dataclass(frozen=True)
class CompressorTable:
    name: str
    entries: tuple[tuple[int, int, int], ...]
    polarity: str
    array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"unknown polarity {self.polarity!r}")
        entries = tuple(tuple(int(b) for b in e) for e in self.entries)
        if len(entries) != 32:
            raise ValueError(f"table {self.name!r} has {len(entries)} entries, need 32")
        for idx, e in enumerate(entries):
            if len(e) != 3 or any(b not in (0, 1) for b in e):
                raise ValueError(f"table {self.name!r}: bad outputs {e} at input {idx:05b}")
        object.__setattr__(self, "entries", entries)
        arr = np.array(entries, dtype=np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @classmethod
    def from_function(cls, name: str, fn, polarity: str) -> CompressorTable:
        return cls(name, tuple(fn(*bits) for bits in INPUTS), polarity)

    def signed_errors(self) -> list[int]:
        return [s + 2 * (c + co) - sum(bits) for bits, (s, c, co) in zip(INPUTS, self.entries)]


def approx_compress(t: CompressorTable, x1: int, x2: int, x3: int, x4: int, cin: int) -> tuple[int, int, int]:
    return t.entries[pack(x1, x2, x3, x4, cin)]


def error_profile(t: CompressorTable) -> ErrorProfile:
    errs = t.signed_errors()
    n_wrong = sum(e != 0 for e in errs)
    mean = sum(errs) / 32
    if n_wrong == 0:
        direction = "exact"
    elif mean > 0:
        direction = "positive"
    elif mean < 0:
        direction = "negative"
    else:
        direction = "balanced"
    return ErrorProfile(n_wrong / 32, mean, direction)


EXACT = CompressorTable.from_function("exact", exact_compress, "exact")
DEFAULT_PC = CompressorTable.from_function("pc_pair_sum", _positive_cell, "positive")
DEFAULT_NC = CompressorTable.from_function("nc_pair_sum", _negative_cell, "negative")


def dumps(t: CompressorTable) -> str:
    lines = [f"name: {t.name}", f"polarity: {t.polarity}"]
    for bits, (s, c, co) in zip(INPUTS, t.entries):
        lines.append(f"{''.join(map(str, bits))} -> {s} {c} {co}")
    return "\n".join(lines) + "\n"


def loads(text: str, name: str | None = None) -> CompressorTable:
    """Parse the ``xxxxx -> s c o`` text format.

    Blank lines and ``#`` comments are ignored.  A ``polarity:`` header is
    required; ``name:`` is optional.
    """
    polarity = None
    entries: dict[int, tuple[int, int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" in line and "->" not in line:
            key, value = (p.strip() for p in line.split(":", 1))
            if key == "polarity":
                polarity = value
            elif key == "name":
                name = name or value
            else:
                raise ValueError(f"line {lineno}: unknown header {key!r}")
            continue
        try:
            lhs, rhs = (p.strip() for p in line.split("->"))
            outs = tuple(int(b) for b in rhs.split())
            if len(lhs) != 5 or set(lhs) - {"0", "1"}:
                raise ValueError
            idx = int(lhs, 2)
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}") from None
        if idx in entries:
            raise ValueError(f"line {lineno}: duplicate input {lhs}")
        entries[idx] = outs
    if polarity is None:
        raise ValueError("missing 'polarity:' header")
    if len(entries) != 32:
        missing = sorted(set(range(32)) - set(entries))
        raise ValueError(f"table incomplete, missing inputs {[f'{m:05b}' for m in missing]}")
    return CompressorTable(name or "custom", tuple(entries[i] for i in range(32)), polarity)


def load(path: str | Path) -> CompressorTable:
    path = Path(path)
    return loads(path.read_text(), name=None)


def save(t: CompressorTable, path: str | Path) -> None:
    Path(path).write_text(dumps(t))
