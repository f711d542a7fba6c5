"""Radix-8 Booth significand multiplier with a 4:2 compressor reduction tree.

The datapath is parametrised by operand width so that the same code can be
checked exhaustively at 8x8 and used at 24x24 for FP32 significands.

Layout of the partial-product matrix (PPM) for width ``w``:

* ``w // 3 + 1`` radix-8 digits, each row is ``digit * a`` as a ``w + 3`` bit
  two's complement word.  Negative rows are stored one's-complemented and a
  correction ("neg") bit is added at the row's LSB column.
* The row sign bit is inverted and a single folded constant
  ``-sum(2**(w + 2 + 3*i))`` (mod ``2**(2w)``) replaces full sign extension.

Only columns ``0 .. 2w-1`` are kept; every identity holds modulo ``2**(2w)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .compressor import DEFAULT_NC, DEFAULT_PC, EXACT, CompressorTable

WIDTH = 24

CONFIG_IDS = ("exact", "PMNI", "PMSI", "PMCI", "PMCSI", "NMNI", "NMSI", "NMCI", "NMCSI")
SCHEMES = ("NI", "SI", "CI", "CSI")

# cell kinds used by placement maps
CELL_EXACT, CELL_PC, CELL_NC = 0, 1, 2
CELL_NAMES = ("exact", "pc", "nc")

# dot sources
DOT_ROW, DOT_NEG, DOT_CONST, DOT_SIGN = 0, 1, 2, 3

# Dadda-style target heights for successive stages
_TARGETS = (2, 3, 4, 6, 9, 13, 19, 28, 42, 63)


@dataclass(frozen=True)
class MultiplierConfig:
    name: str
    polarity: str | None = None
    scheme: str | None = None
    pc: CompressorTable = DEFAULT_PC
    nc: CompressorTable = DEFAULT_NC

    @property
    def is_exact(self) -> bool:
        return self.polarity is None

    @property
    def index(self) -> int:
        return CONFIG_IDS.index(self.name)

    def with_tables(self, pc: CompressorTable | None = None, nc: CompressorTable | None = None) -> MultiplierConfig:
        return MultiplierConfig(self.name, self.polarity, self.scheme, pc or self.pc, nc or self.nc)

    def cell_tables(self) -> np.ndarray:
        """(3, 32, 3) uint8 stack indexed by CELL_EXACT / CELL_PC / CELL_NC."""
        return np.stack([EXACT.array, self.pc.array, self.nc.array])

    def __str__(self):
        return self.name


def _make_configs() -> dict[str, MultiplierConfig]:
    out = {"exact": MultiplierConfig("exact")}
    for pol in ("PM", "NM"):
        for scheme in SCHEMES:
            out[pol + scheme] = MultiplierConfig(pol + scheme, pol, scheme)
    return out


CONFIGS = _make_configs()
EXACT_CONFIG = CONFIGS["exact"]
APPROX_IDS = CONFIG_IDS[1:]


def get_config(name: str | MultiplierConfig) -> MultiplierConfig:
    if isinstance(name, MultiplierConfig):
        return name
    key = name.strip()
    key = "exact" if key.lower() == "exact" else key.upper()
    try:
        return CONFIGS[key]
    except KeyError:
        raise KeyError(f"unknown multiplier config {name!r}; expected one of {', '.join(CONFIG_IDS)}") from None


# --------------------------------------------------------------------------
# Booth encoding and partial products


def n_digits(width: int = WIDTH) -> int:
    return width // 3 + 1


def radix8_encode(m: int, width: int = WIDTH) -> list[int]:
    """Recode an unsigned ``width``-bit value into radix-8 digits in -4..4."""
    if not 0 <= m < (1 << width):
        raise ValueError(f"{m} does not fit in {width} bits")
    ext = m << 1  # appended zero below the LSB; zero MSB padding is implicit
    digits = []
    for i in range(n_digits(width)):
        grp = (ext >> (3 * i)) & 0xF
        b_low, b0, b1, b2 = grp & 1, (grp >> 1) & 1, (grp >> 2) & 1, (grp >> 3) & 1
        digits.append(-4 * b2 + 2 * b1 + b0 + b_low)
    return digits


def row_bits(width: int = WIDTH) -> int:
    return width + 3


@lru_cache(maxsize=None)
def dot_layout(width: int = WIDTH) -> tuple[tuple[tuple[int, int, int], ...], ...]:
    """Static dot sources per column: ``(kind, row, bit)`` tuples."""
    ncols = 2 * width
    rb = row_bits(width)
    cols: list[list[tuple[int, int, int]]] = [[] for _ in range(ncols)]
    for i in range(n_digits(width)):
        for j in range(rb):
            c = 3 * i + j
            if c < ncols:
                cols[c].append((DOT_SIGN if j == rb - 1 else DOT_ROW, i, j))
    for i in range(n_digits(width)):
        if 3 * i < ncols:
            cols[3 * i].append((DOT_NEG, i, 0))
    const = sign_constant(width)
    for c in range(ncols):
        if (const >> c) & 1:
            cols[c].append((DOT_CONST, -1, c))
    return tuple(tuple(c) for c in cols)


def sign_constant(width: int = WIDTH) -> int:
    mod = 1 << (2 * width)
    return -sum(1 << (row_bits(width) - 1 + 3 * i) for i in range(n_digits(width))) % mod


@dataclass
class PartialProductMatrix:
    width: int
    digits: list[int]
    rows: list[int]  # raw ``row_bits`` patterns (one's complement for negatives)
    negs: list[int]
    columns: list[list[int]] = field(default_factory=list)

    def evaluate(self) -> int:
        total = sum(bit << c for c, col in enumerate(self.columns) for bit in col)
        return total % (1 << (2 * self.width))

    @property
    def heights(self) -> list[int]:
        return [len(c) for c in self.columns]


def generate_ppm(a: int, b: int, width: int = WIDTH) -> PartialProductMatrix:
    """Partial products of ``a * b`` with ``b`` Booth-recoded (multiplier)."""
    if not 0 <= a < (1 << width):
        raise ValueError(f"multiplicand {a} does not fit in {width} bits")
    rb = row_bits(width)
    mask = (1 << rb) - 1
    triple = 3 * a  # hard multiple: one exact addition a + 2a
    multiples = (0, a, 2 * a, triple, 4 * a)
    digits = radix8_encode(b, width)
    rows, negs = [], []
    for d in digits:
        mag = multiples[abs(d)]
        if d < 0:
            rows.append(~mag & mask)
            negs.append(1)
        else:
            rows.append(mag)
            negs.append(0)
    ppm = PartialProductMatrix(width, digits, rows, negs)
    ppm.columns = [[_dot_value(src, rows, negs) for src in col] for col in dot_layout(width)]
    return ppm


def _dot_value(src, rows, negs) -> int:
    kind, i, j = src
    if kind == DOT_ROW:
        return (rows[i] >> j) & 1
    if kind == DOT_SIGN:
        return 1 - ((rows[i] >> j) & 1)
    if kind == DOT_NEG:
        return negs[i]
    return 1


# --------------------------------------------------------------------------
# Reduction tree


@dataclass(frozen=True)
class Netlist:
    """Compressor tree for one operand width.

    Signals ``0 .. n_dots-1`` are the PPM dots in ``dot_layout`` order; every
    cell adds three output signals.  Input id ``-1`` is a constant 0.
    """

    width: int
    n_dots: int
    n_signals: int
    n_stages: int
    dot_kind: np.ndarray
    dot_row: np.ndarray
    dot_bit: np.ndarray
    cell_in: np.ndarray  # (n_cells, 5) int32
    cell_out: np.ndarray  # (n_cells, 3) int32
    cell_stage: np.ndarray
    cell_col: np.ndarray
    final: np.ndarray  # (2, 2w) int32, -1 where a column has < 2 bits

    @property
    def n_cells(self) -> int:
        return len(self.cell_stage)


@lru_cache(maxsize=None)
def build_netlist(width: int = WIDTH) -> Netlist:
    layout = dot_layout(width)
    ncols = 2 * width
    kinds, rows_, bits = [], [], []
    cols: list[list[int]] = []
    sid = 0
    for col in layout:
        ids = []
        for kind, i, j in col:
            kinds.append(kind)
            rows_.append(i)
            bits.append(j)
            ids.append(sid)
            sid += 1
        cols.append(ids)
    n_dots = sid

    cell_in, cell_out, cell_stage, cell_col = [], [], [], []
    stage = 0
    while max(len(c) for c in cols) > 2:
        target = max(t for t in _TARGETS if t < max(len(c) for c in cols))
        nxt: list[list[int]] = [[] for _ in range(ncols)]
        pending: list[int] = []  # couts from column j-1 of this stage
        carries: list[int] = []  # carries from column j-1, land in next stage
        for j in range(ncols):
            dots = list(cols[j])
            cins, pending = pending, []
            incoming, carries = carries, []
            sums: list[int] = []
            while len(dots) + len(cins) + len(incoming) + len(sums) > target:
                if len(dots) >= 3:
                    take = min(4, len(dots))
                elif cins and dots:
                    take = len(dots)
                else:
                    break
                xs = dots[:take] + [-1] * (4 - take)
                dots = dots[take:]
                cin = cins.pop(0) if cins else -1
                s, c, co = sid, sid + 1, sid + 2
                sid += 3
                cell_in.append(xs + [cin])
                cell_out.append([s, c, co])
                cell_stage.append(stage)
                cell_col.append(j)
                sums.append(s)
                if j + 1 < ncols:
                    carries.append(c)
                    pending.append(co)
            height = len(dots) + len(cins) + len(incoming) + len(sums)
            if height > target:
                raise RuntimeError(f"reduction stalled at stage {stage}, column {j}")
            nxt[j] = dots + cins + incoming + sums
        cols = nxt
        stage += 1

    final = np.full((2, ncols), -1, dtype=np.int32)
    for j, col in enumerate(cols):
        for r, s in enumerate(col):
            final[r, j] = s
    return Netlist(
        width=width,
        n_dots=n_dots,
        n_signals=sid,
        n_stages=stage,
        dot_kind=np.array(kinds, dtype=np.int8),
        dot_row=np.array(rows_, dtype=np.int16),
        dot_bit=np.array(bits, dtype=np.int16),
        cell_in=np.array(cell_in, dtype=np.int32).reshape(-1, 5),
        cell_out=np.array(cell_out, dtype=np.int32).reshape(-1, 3),
        cell_stage=np.array(cell_stage, dtype=np.int16),
        cell_col=np.array(cell_col, dtype=np.int16),
        final=final,
    )


def cell_kind(cfg: MultiplierConfig, stage: int, column: int, width: int = WIDTH) -> int:
    """Which cell type sits at (stage, column).

    This is the single place that encodes the interleaving schemes.  Parity 0
    gets the config's leading polarity (PC for PM configs, NC for NM).
    """
    if cfg.is_exact or column >= width:
        return CELL_EXACT
    if cfg.scheme == "NI":
        parity = 0
    elif cfg.scheme == "SI":
        parity = stage & 1
    elif cfg.scheme == "CI":
        parity = column & 1
    elif cfg.scheme == "CSI":
        parity = (stage + column) & 1
    else:
        raise ValueError(f"unknown scheme {cfg.scheme!r}")
    lead, other = (CELL_PC, CELL_NC) if cfg.polarity == "PM" else (CELL_NC, CELL_PC)
    return lead if parity == 0 else other


def placement(cfg: MultiplierConfig, width: int = WIDTH) -> np.ndarray:
    """Cell kind per netlist cell, aligned with ``build_netlist(width)``."""
    net = build_netlist(width)
    return np.array(
        [cell_kind(cfg, int(s), int(c), width) for s, c in zip(net.cell_stage, net.cell_col)],
        dtype=np.int8,
    )


def placement_grid(cfg: MultiplierConfig, width: int = WIDTH) -> np.ndarray:
    """(stages, 2w) map: -1 where no cell, else a bitmask of kinds present."""
    net = build_netlist(width)
    grid = np.full((net.n_stages, 2 * width), -1, dtype=np.int8)
    for kind, s, c in zip(placement(cfg, width), net.cell_stage, net.cell_col):
        grid[s, c] = max(grid[s, c], 0) | (1 << int(kind))
    return grid


def placement_csv(cfg: MultiplierConfig, width: int = WIDTH) -> str:
    net = build_netlist(width)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "cell", "stage", "column", "kind"])
    for idx, (kind, s, c) in enumerate(zip(placement(cfg, width), net.cell_stage, net.cell_col)):
        w.writerow([cfg.name, idx, int(s), int(c), CELL_NAMES[kind]])
    return buf.getvalue()


def reduce_ppm(ppm: PartialProductMatrix, cfg: MultiplierConfig) -> tuple[int, int]:
    """Run the compressor tree on ``ppm`` and return the two final rows."""
    net = build_netlist(ppm.width)
    sig = [0] * net.n_signals
    k = 0
    for col in ppm.columns:
        for bit in col:
            sig[k] = bit
            k += 1
    tables = (EXACT.entries, cfg.pc.entries, cfg.nc.entries)
    kinds = placement(cfg, ppm.width)
    for n in range(net.n_cells):
        x1, x2, x3, x4, cin = (sig[i] if i >= 0 else 0 for i in net.cell_in[n])
        outs = tables[kinds[n]][(x1 << 4) | (x2 << 3) | (x3 << 2) | (x4 << 1) | cin]
        for o, v in zip(net.cell_out[n], outs):
            sig[o] = v
    row_a = row_b = 0
    for j in range(2 * ppm.width):
        if net.final[0, j] >= 0:
            row_a |= sig[net.final[0, j]] << j
        if net.final[1, j] >= 0:
            row_b |= sig[net.final[1, j]] << j
    return row_a, row_b


def final_add(row_a: int, row_b: int, width: int = WIDTH) -> int:
    """Carry-propagate addition; the carry out of column 2w-1 is discarded."""
    return (row_a + row_b) & ((1 << (2 * width)) - 1)


def mantissa_multiply(a: int, b: int, cfg: MultiplierConfig | str = EXACT_CONFIG, width: int = WIDTH) -> int:
    cfg = get_config(cfg)
    ppm = generate_ppm(a, b, width)
    return final_add(*reduce_ppm(ppm, cfg), width=width)
