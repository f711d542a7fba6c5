"""Compiled (numba) versions of the significand and binary32 multipliers.

Three evaluation modes share the netlist built in :mod:`approxfp.booth`:

``full``
    every compressor cell is simulated and the two final rows are added,
    exactly like :func:`approxfp.booth.reduce_ppm`.
``lanes``
    exact cells conserve value, so the product is ``a*b`` plus the signed
    error of each approximate cell weighted by its column.  Only cells in
    the approximate region are simulated, one product at a time.
``sliced``
    the ``lanes`` computation bit-sliced across 64 products per machine
    word.  Cells use the exact adder equations, patched on the input codes
    where a cell's table departs from them.

All three give identical results.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from . import booth, compressor

_NB = dict(cache=True, nogil=True)


@numba.njit(**_NB)
def _fill_dots(a, b, width, dot_sig, dot_src, dot_shift, dot_inv, rows, sig):
    """Set the initial dot signals.

    ``rows[i]`` holds row ``i``'s pattern with its neg bit at position
    ``width + 3``; the extra last entry is all ones for constant dots.
    """
    rb = width + 3
    mask = (np.int64(1) << rb) - 1
    nd = width // 3 + 1
    ext = np.int64(b) << 1
    for i in range(nd):
        grp = (ext >> (3 * i)) & 0xF
        d = -4 * ((grp >> 3) & 1) + 2 * ((grp >> 2) & 1) + ((grp >> 1) & 1) + (grp & 1)
        if d < 0:
            rows[i] = (~(np.int64(a) * -d) & mask) | (np.int64(1) << rb)
        else:
            rows[i] = np.int64(a) * d
    rows[nd] = -1
    for k in range(dot_sig.shape[0]):
        sig[dot_sig[k]] = ((rows[dot_src[k]] >> dot_shift[k]) & 1) ^ dot_inv[k]


@numba.njit(**_NB)
def _run_cells(cell_in, cell_out, cell_col, kinds, tables, sig):
    """Evaluate cells in order; returns the summed signed error.

    ``tables`` is the (3, 32, 3) stack flattened to 288 entries; inputs
    that are constant 0 point at a signal slot that is never written.
    """
    err = np.int64(0)
    for n in range(cell_col.shape[0]):
        i5 = 5 * n
        v0 = sig[cell_in[i5]]
        v1 = sig[cell_in[i5 + 1]]
        v2 = sig[cell_in[i5 + 2]]
        v3 = sig[cell_in[i5 + 3]]
        v4 = sig[cell_in[i5 + 4]]
        base = kinds[n] * 96 + ((v0 << 4) | (v1 << 3) | (v2 << 2) | (v3 << 1) | v4) * 3
        o0 = tables[base]
        o1 = tables[base + 1]
        o2 = tables[base + 2]
        i3 = 3 * n
        sig[cell_out[i3]] = o0
        sig[cell_out[i3 + 1]] = o1
        sig[cell_out[i3 + 2]] = o2
        e = o0 + 2 * (o1 + o2) - (v0 + v1 + v2 + v3 + v4)
        if e != 0:
            err += e << cell_col[n]
    return err


@numba.njit(inline="always", **_NB)
def _product(a, b, width, full, approx, d0, d1, d2, d3, c0, c1, c2, final, kinds, tables, rows, sig):
    """Significand product.

    ``full`` runs every cell and adds the final rows; otherwise only the
    approximate-region cells run and their errors are added to ``a*b``.
    """
    ncols = 2 * width
    mask = (np.int64(1) << ncols) - 1
    if not full:
        exact = np.int64(a) * np.int64(b)
        if not approx:
            return exact
        _fill_dots(a, b, width, d0, d1, d2, d3, rows, sig)
        return (exact + _run_cells(c0, c1, c2, kinds, tables, sig)) & mask
    _fill_dots(a, b, width, d0, d1, d2, d3, rows, sig)
    _run_cells(c0, c1, c2, kinds, tables, sig)
    ra = np.int64(0)
    rb = np.int64(0)
    for j in range(ncols):
        ra |= sig[final[j]] << j
        rb |= sig[final[ncols + j]] << j
    return (ra + rb) & mask


@numba.njit(inline="always", **_NB)
def _round_pack(sign, product, lsb):
    if product == 0:
        return np.uint32(sign << 31)
    nbits = 48
    while not (product >> (nbits - 1)) & 1:
        nbits -= 1
    lead = lsb + nbits - 1
    q = max(lead - 23, -149)
    shift = q - lsb
    if shift <= 0:
        m = product << (-shift)
    elif shift > 50:
        # product < 2**48 sits below half an ulp; LLVM shifts >= 64 are undefined
        return np.uint32(sign << 31)
    else:
        m = product >> shift
        rem = product & ((np.int64(1) << shift) - 1)
        half = np.int64(1) << (shift - 1)
        if rem > half or (rem == half and (m & 1)):
            m += 1
    if m >> 24:
        m >>= 1
        q += 1
    if m < (1 << 23):
        return np.uint32((sign << 31) | m)
    biased = q + 150
    if biased >= 0xFF:
        return np.uint32((sign << 31) | 0x7F800000)
    return np.uint32((sign << 31) | (biased << 23) | (m - (1 << 23)))


@numba.njit(inline="always", **_NB)
def _mul_word(a, b, full, approx, d0, d1, d2, d3, c0, c1, c2, final, kinds, tables, rows, sig):
    a = np.int64(a)
    b = np.int64(b)
    ea = (a >> 23) & 0xFF
    eb = (b >> 23) & 0xFF
    ma = a & 0x7FFFFF
    mb = b & 0x7FFFFF
    sign = (a >> 31) ^ (b >> 31)
    if ea == 0xFF and ma != 0:
        return np.uint32(a | 0x400000)
    if eb == 0xFF and mb != 0:
        return np.uint32(b | 0x400000)
    a_zero = ea == 0 and ma == 0
    b_zero = eb == 0 and mb == 0
    if ea == 0xFF or eb == 0xFF:
        if a_zero or b_zero:
            return np.uint32(0xFFC00000)
        return np.uint32((sign << 31) | 0x7F800000)
    if a_zero or b_zero:
        return np.uint32(sign << 31)
    siga = ma | (1 << 23) if ea else ma
    sigb = mb | (1 << 23) if eb else mb
    p = _product(siga, sigb, 24, full, approx, d0, d1, d2, d3, c0, c1, c2, final, kinds, tables, rows, sig)
    lsb = max(ea, 1) + max(eb, 1) - 254 - 46
    return _round_pack(sign, p, lsb)


@numba.njit(**_NB)
def _mul_arrays(a, b, scalar_a, m, full, n_signals):
    net, kinds_full, low, kinds_low, tables, approx = m
    d0, d1, d2, d3, c0, c1, c2, final = net if full else low
    kinds = kinds_full if full else kinds_low
    sig = np.zeros(n_signals + 1, np.int64)
    rows = np.empty(24, np.int64)
    out = np.empty(b.shape[0], np.uint32)
    for i in range(b.shape[0]):
        ai = a[0] if scalar_a else a[i]
        out[i] = _mul_word(ai, b[i], full, approx, d0, d1, d2, d3, c0, c1, c2, final, kinds, tables, rows, sig)
    return out


@numba.njit(**_NB)
def _sig_products(a, b, width, m, full, n_signals):
    net, kinds_full, low, kinds_low, tables, approx = m
    d0, d1, d2, d3, c0, c1, c2, final = net if full else low
    kinds = kinds_full if full else kinds_low
    sig = np.zeros(n_signals + 1, np.int64)
    rows = np.empty(24, np.int64)
    out = np.empty(a.shape[0], np.int64)
    for i in range(a.shape[0]):
        out[i] = _product(a[i], b[i], width, full, approx, d0, d1, d2, d3, c0, c1, c2, final, kinds, tables, rows, sig)
    return out


@numba.njit(**_NB)
def _transpose64(x):
    """In-place 64x64 bit transpose: afterwards bit ``j`` of ``x[i]`` is the
    former bit ``i`` of ``x[j]``."""
    j = 32
    m = np.int64(0x00000000FFFFFFFF)
    while j != 0:
        k = 0
        while k < 64:
            # arithmetic shift is harmless: m clears the top j bits
            t = ((x[k] >> j) ^ x[k + j]) & m
            x[k] ^= t << j
            x[k + j] ^= t
            k = (k + j + 1) & ~j
        j >>= 1
        m ^= m << j


@numba.njit(**_NB)
def _slice(vals, start, count, nbits, buf, out):
    """Bit-slice ``vals[start:start+count]``: bit ``l`` of ``out[j]`` is bit ``j`` of lane ``l``."""
    for l in range(count):
        buf[l] = vals[start + l]
    buf[count:] = 0
    _transpose64(buf)
    out[:nbits] = buf[:nbits]


@numba.njit(inline="always", **_NB)
def _increment(acc, j, c):
    """Add the one-bit lane mask ``c`` at weight ``2**j`` to the sliced counter."""
    while c != 0 and j < 64:
        t = acc[j] & c
        acc[j] ^= c
        c = t
        j += 1


@numba.njit(inline="always", **_NB)
def _accumulate(pos, neg, mask, e, col):
    acc = pos if e > 0 else neg
    v = abs(e)
    j = col
    while v:
        if v & 1:
            _increment(acc, j, mask)
        v >>= 1
        j += 1


@numba.njit(**_NB)
def _multiples(a1, rb, a2, a3, a4):
    """Sliced ``2a``, ``3a`` and ``4a`` from sliced ``a``."""
    carry = np.int64(0)
    for j in range(rb):
        a2[j] = a1[j - 1] if j >= 1 else 0
        a4[j] = a1[j - 2] if j >= 2 else 0
        x = a1[j]
        y = a2[j]
        a3[j] = x ^ y ^ carry
        carry = (x & y) | (x & carry) | (y & carry)


@numba.njit(**_NB)
def _sliced_group(width, bw, a1, a2, a3, a4, sel, d0, d1, d2, d3, c0, c1, c2, kinds, corr, sig, pos, neg, errs):
    """Run the low-column netlist for 64 lanes at once; ``errs[l]`` gets lane ``l``'s summed cell error."""
    nd = width // 3 + 1
    rb = width + 3
    for i in range(nd):
        x0 = bw[3 * i - 1] if i > 0 else 0
        x1 = bw[3 * i]
        x2 = bw[3 * i + 1]
        x3 = bw[3 * i + 2]
        p0 = x0 ^ x3
        p1 = x1 ^ x3
        p2 = x2 ^ x3
        sel[i, 0] = ~p2 & (p1 ^ p0)
        sel[i, 1] = (~p2 & p1 & p0) | (p2 & ~p1 & ~p0)
        sel[i, 2] = p2 & (p1 ^ p0)
        sel[i, 3] = p2 & p1 & p0
        sel[i, 4] = x3 & ~(x2 & x1 & x0)
    for k in range(d0.shape[0]):
        src = d1[k]
        sh = d2[k]
        if src == nd:
            v = np.int64(-1)
        elif sh == rb:
            v = sel[src, 4]
        else:
            v = (
                (sel[src, 0] & a1[sh]) | (sel[src, 1] & a2[sh]) | (sel[src, 2] & a3[sh]) | (sel[src, 3] & a4[sh])
            ) ^ sel[src, 4]
        if d3[k]:
            v = ~v
        sig[d0[k]] = v

    corr_start, corr_n, corr_code, corr_xor, corr_err = corr
    for n in range(c2.shape[0]):
        i5 = 5 * n
        v0 = sig[c0[i5]]
        v1 = sig[c0[i5 + 1]]
        v2 = sig[c0[i5 + 2]]
        v3 = sig[c0[i5 + 3]]
        v4 = sig[c0[i5 + 4]]
        s1 = v0 ^ v1 ^ v2
        o2 = (v0 & v1) | (v0 & v2) | (v1 & v2)
        o0 = s1 ^ v3 ^ v4
        o1 = (s1 & v3) | (s1 & v4) | (v3 & v4)
        kind = kinds[n]
        lo = corr_start[kind]
        # entries are grouped by error value; masks of one value are
        # disjoint minterms, so they are OR-ed and accumulated once
        cur_e = np.int64(0)
        cur_m = np.int64(0)
        for q in range(lo, lo + corr_n[kind]):
            # corr_code row q: xor masks turning each input into its literal
            mm = (v0 ^ corr_code[q, 0]) & (v1 ^ corr_code[q, 1]) & (v2 ^ corr_code[q, 2])
            mm &= (v3 ^ corr_code[q, 3]) & (v4 ^ corr_code[q, 4])
            if mm == 0:
                continue
            o0 ^= mm & corr_xor[q, 0]
            o1 ^= mm & corr_xor[q, 1]
            o2 ^= mm & corr_xor[q, 2]
            e = corr_err[q]
            if e != cur_e:
                if cur_m != 0:
                    _accumulate(pos, neg, cur_m, cur_e, c2[n])
                cur_e = e
                cur_m = 0
            if e != 0:
                cur_m |= mm
        if cur_m != 0:
            _accumulate(pos, neg, cur_m, cur_e, c2[n])
        i3 = 3 * n
        sig[c1[i3]] = o0
        sig[c1[i3 + 1]] = o1
        sig[c1[i3 + 2]] = o2

    # errs[l] = pos - neg for lane l: sliced subtract, then transpose
    borrow = np.int64(0)
    for j in range(64):
        p = pos[j]
        q = neg[j]
        errs[j] = p ^ q ^ borrow
        borrow = (~p & q) | (~(p ^ q) & borrow)
    _transpose64(errs)


@numba.njit(**_NB)
def _sliced_products(sa, sb, scalar_a, width, low, kinds, corr, n_signals):
    """Significand products of approximate configs, 64 lanes per pass."""
    d0, d1, d2, d3, c0, c1, c2, _ = low
    rb = width + 3
    nd = width // 3 + 1
    mask = (np.int64(1) << (2 * width)) - 1
    n = sb.shape[0]
    out = np.empty(n, np.int64)
    sig = np.zeros(n_signals + 1, np.int64)
    bw = np.zeros(rb + 1, np.int64)
    a1 = np.zeros(rb, np.int64)
    a2 = np.zeros(rb, np.int64)
    a3 = np.zeros(rb, np.int64)
    a4 = np.zeros(rb, np.int64)
    sel = np.zeros((nd, 5), np.int64)
    buf = np.zeros(64, np.int64)
    pos = np.zeros(64, np.int64)
    neg = np.zeros(64, np.int64)
    errs = np.zeros(64, np.int64)
    if scalar_a:
        for j in range(width):
            a1[j] = -((sa[0] >> j) & 1)
        _multiples(a1, rb, a2, a3, a4)
    for start in range(0, n, 64):
        count = min(64, n - start)
        _slice(sb, start, count, width, buf, bw)
        if not scalar_a:
            _slice(sa, start, count, width, buf, a1)
            _multiples(a1, rb, a2, a3, a4)
        pos[:] = 0
        neg[:] = 0
        _sliced_group(width, bw, a1, a2, a3, a4, sel, d0, d1, d2, d3, c0, c1, c2, kinds, corr, sig, pos, neg, errs)
        for l in range(count):
            av = sa[0] if scalar_a else sa[start + l]
            out[start + l] = (av * sb[start + l] + errs[l]) & mask
    return out


@numba.njit(**_NB)
def _mul_arrays_sliced(a, b, scalar_a, m, corr, n_signals):
    _, _, low, kinds_low, _, approx = m
    n = b.shape[0]
    out = np.empty(n, np.uint32)
    idx = np.empty(n, np.int64)
    sa = np.empty(1 if scalar_a else n, np.int64)
    sb = np.empty(n, np.int64)
    sgn = np.empty(n, np.int64)
    lsb = np.empty(n, np.int64)
    cnt = 0
    for i in range(n):
        ai = np.int64(a[0] if scalar_a else a[i])
        bi = np.int64(b[i])
        ea = (ai >> 23) & 0xFF
        eb = (bi >> 23) & 0xFF
        ma = ai & 0x7FFFFF
        mb = bi & 0x7FFFFF
        sign = (ai >> 31) ^ (bi >> 31)
        a_zero = ea == 0 and ma == 0
        b_zero = eb == 0 and mb == 0
        if ea == 0xFF and ma != 0:
            out[i] = np.uint32(ai | 0x400000)
        elif eb == 0xFF and mb != 0:
            out[i] = np.uint32(bi | 0x400000)
        elif ea == 0xFF or eb == 0xFF:
            out[i] = np.uint32(0xFFC00000) if (a_zero or b_zero) else np.uint32((sign << 31) | 0x7F800000)
        elif a_zero or b_zero:
            out[i] = np.uint32(sign << 31)
        else:
            siga = ma | (1 << 23) if ea else ma
            if scalar_a:
                sa[0] = siga
            else:
                sa[cnt] = siga
            sb[cnt] = mb | (1 << 23) if eb else mb
            sgn[cnt] = sign
            lsb[cnt] = max(ea, 1) + max(eb, 1) - 254 - 46
            idx[cnt] = i
            cnt += 1
    if cnt == 0:
        return out
    prod = _sliced_products(sa if scalar_a else sa[:cnt], sb[:cnt], scalar_a, 24, low, kinds_low, corr, n_signals)
    for k in range(cnt):
        out[idx[k]] = _round_pack(sgn[k], prod[k], lsb[k])
    return out


def _corrections(cfg: booth.MultiplierConfig):
    """Per cell kind, the input codes where the table departs from the
    sliced exact formula.

    Returns ``(start, count, lits, xors, errs)``: per kind an index range;
    per entry the five input xor masks selecting the minterm, all-ones masks
    for the flipped outputs (sum, carry, cout) and the signed error.
    """
    start, count, codes, xors, errs = [], [], [], [], []
    for table in cfg.cell_tables():
        entries = []
        for code in range(32):
            bits = [(code >> (4 - q)) & 1 for q in range(5)]
            ref = compressor.exact_compress(*bits)
            got = tuple(int(v) for v in table[code])
            x = sum(1 << q for q in range(3) if got[q] != ref[q])
            if x:
                entries.append((got[0] + 2 * (got[1] + got[2]) - sum(bits), code, x))
        entries.sort()  # group equal errors together
        start.append(len(codes))
        count.append(len(entries))
        for e, code, x in entries:
            codes.append([0 if (code >> (4 - q)) & 1 else -1 for q in range(5)])
            xors.append([-((x >> q) & 1) for q in range(3)])
            errs.append(e)
    arr = lambda v, shape: np.array(v, dtype=np.int64).reshape(shape)  # noqa: E731
    return (arr(start, -1), arr(count, -1), arr(codes, (-1, 5)), arr(xors, (-1, 3)), arr(errs, -1))


def _subnet(width: int, max_col: int):
    net = booth.build_netlist(width)
    zero = net.n_signals  # never written, stays 0
    nd = booth.n_digits(width)
    dot_col = np.array([c for c, col in enumerate(booth.dot_layout(width)) for _ in col])
    dots = np.nonzero(dot_col < max_col)[0]
    kind = net.dot_kind[dots]
    src = np.where(kind == booth.DOT_CONST, nd, net.dot_row[dots])
    shift = np.select(
        [kind == booth.DOT_NEG, kind == booth.DOT_CONST], [booth.row_bits(width), 0], net.dot_bit[dots]
    )
    inv = (kind == booth.DOT_SIGN).astype(np.int64)
    cells = np.nonzero(net.cell_col < max_col)[0]
    cell_in = np.where(net.cell_in[cells] < 0, zero, net.cell_in[cells])
    final = np.where(net.final < 0, zero, net.final)
    arrays = (
        dots.astype(np.int64),
        src.astype(np.int64),
        shift.astype(np.int64),
        inv,
        cell_in.astype(np.int64).ravel(),
        net.cell_out[cells].astype(np.int64).ravel(),
        net.cell_col[cells].astype(np.int64),
        final.astype(np.int64).ravel(),
    )
    return arrays, cells


MODES = ("sliced", "lanes", "full")


@dataclass(frozen=True)
class CompiledMultiplier:
    """A multiplier config prepared for the compiled kernels.

    ``mode`` selects the evaluation strategy; all three give identical
    results.  ``sliced`` (default) runs 64 products per pass through the
    approximate region, ``lanes`` runs the same region one product at a
    time and ``full`` simulates every cell plus the final adder.
    """

    cfg: booth.MultiplierConfig
    width: int
    bundle: tuple
    corr: tuple
    n_signals: int

    @property
    def approx(self) -> bool:
        return not self.cfg.is_exact

    def multiply(self, a, b, mode: str = "sliced") -> np.ndarray:
        """Elementwise binary32 product of two uint32 bit arrays."""
        self._check(mode, fp32=True)
        a = np.asarray(a, dtype=np.uint32)
        b = np.asarray(b, dtype=np.uint32)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        return self._run(a.ravel(), b.ravel(), False, mode).reshape(a.shape)

    def multiply_scalar(self, a: int, b, mode: str = "sliced") -> np.ndarray:
        """One word ``a`` (the multiplicand) times every word of ``b``."""
        self._check(mode, fp32=True)
        b = np.asarray(b, dtype=np.uint32)
        return self._run(np.array([a], np.uint32), b.ravel(), True, mode).reshape(b.shape)

    def significand_products(self, a, b, mode: str = "sliced") -> np.ndarray:
        self._check(mode)
        a = np.asarray(a, dtype=np.int64).ravel()
        b = np.asarray(b, dtype=np.int64).ravel()
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        limit = 1 << self.width
        if a.size and (a.min() < 0 or a.max() >= limit or b.min() < 0 or b.max() >= limit):
            raise ValueError(f"significands must fit in {self.width} bits")
        if mode == "sliced" and self.approx:
            _, _, low, kinds_low, _, _ = self.bundle
            return _sliced_products(a, b, False, self.width, low, kinds_low, self.corr, self.n_signals)
        return _sig_products(a, b, self.width, self.bundle, mode == "full", self.n_signals)

    def _run(self, a, b, scalar_a, mode):
        if mode == "sliced" and self.approx:
            return _mul_arrays_sliced(a, b, scalar_a, self.bundle, self.corr, self.n_signals)
        return _mul_arrays(a, b, scalar_a, self.bundle, mode == "full", self.n_signals)

    def _check(self, mode, fp32=False):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if fp32 and self.width != 24:
            raise ValueError("binary32 multiply needs the 24-bit datapath")


def compile_config(cfg: booth.MultiplierConfig | str, width: int = booth.WIDTH) -> CompiledMultiplier:
    cfg = booth.get_config(cfg)
    kinds = booth.placement(cfg, width).astype(np.int64)
    full_net, _ = _subnet(width, 2 * width)
    low_net, low_cells = _subnet(width, width)
    tables = cfg.cell_tables().ravel().astype(np.int64)
    bundle = (full_net, kinds, low_net, kinds[low_cells], tables, not cfg.is_exact)
    return CompiledMultiplier(cfg, width, bundle, _corrections(cfg), booth.build_netlist(width).n_signals)


@lru_cache(maxsize=None)
def _compiled(name: str, width: int) -> CompiledMultiplier:
    return compile_config(name, width)


def compiled(cfg: booth.MultiplierConfig | str, width: int = booth.WIDTH) -> CompiledMultiplier:
    """Compiled form of ``cfg``; built-in configs with default tables are cached."""
    cfg = booth.get_config(cfg)
    if cfg == booth.CONFIGS[cfg.name]:
        return _compiled(cfg.name, width)
    return compile_config(cfg, width)


def multiply_bits(a, b, cfg: booth.MultiplierConfig | str = booth.EXACT_CONFIG) -> np.ndarray:
    return compiled(cfg).multiply(a, b)


def multiply_f32(a, b, cfg: booth.MultiplierConfig | str = booth.EXACT_CONFIG) -> np.ndarray:
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float32), np.asarray(b, dtype=np.float32))
    out = multiply_bits(np.ascontiguousarray(a).view(np.uint32), np.ascontiguousarray(b).view(np.uint32), cfg)
    return out.view(np.float32)
