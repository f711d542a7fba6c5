"""Bit-level IEEE-754 binary32 words and the multiplication datapath.

Everything here works on plain ``int`` bit patterns.  ``fp32_multiply`` is
the scalar reference: it routes the significand product through
:func:`approxfp.booth.mantissa_multiply`, so it is slow but fully
transparent.  The vectorised equivalent lives in :mod:`approxfp.kernels`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

from . import booth

BIAS = 127
SIGN_BIT = 0x8000_0000
EXP_MASK = 0x7F80_0000
FRAC_MASK = 0x007F_FFFF
ABS_MASK = 0x7FFF_FFFF
QUIET_BIT = 0x0040_0000
POS_INF = 0x7F80_0000
DEFAULT_NAN = 0xFFC0_0000  # x86 "real indefinite"

ZERO, SUBNORMAL, NORMAL, INFINITY, NAN = "zero", "subnormal", "normal", "infinity", "nan"
CLASSES = (ZERO, SUBNORMAL, NORMAL, INFINITY, NAN)


class Decoded(NamedTuple):
    sign: int
    exponent: int
    mantissa: int
    cls: str


def classify(exponent: int, mantissa: int) -> str:
    if exponent == 0:
        return ZERO if mantissa == 0 else SUBNORMAL
    if exponent == 0xFF:
        return INFINITY if mantissa == 0 else NAN
    return NORMAL


def decode(w: int) -> Decoded:
    w &= 0xFFFF_FFFF
    e = (w >> 23) & 0xFF
    m = w & FRAC_MASK
    return Decoded(w >> 31, e, m, classify(e, m))


def encode(sign: int, exponent: int, mantissa: int) -> int:
    if sign not in (0, 1) or not 0 <= exponent <= 0xFF or not 0 <= mantissa <= FRAC_MASK:
        raise ValueError(f"field out of range: sign={sign} exponent={exponent} mantissa={mantissa}")
    return (sign << 31) | (exponent << 23) | mantissa


def significand(w: int) -> int:
    """24-bit significand with the hidden bit made explicit."""
    _, e, m, cls = decode(w)
    if cls in (INFINITY, NAN):
        raise ValueError(f"0x{w:08X} is {cls}; it has no significand")
    return m | (1 << 23) if cls == NORMAL else m


def bits_of(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def float_of(w: int) -> float:
    return struct.unpack("<f", struct.pack("<I", w & 0xFFFF_FFFF))[0]


def value(w: int) -> float:
    """Exact real value (as a Python float) of a finite word."""
    s, e, m, cls = decode(w)
    if cls in (INFINITY, NAN):
        return float_of(w)
    mag = m * 2.0**-149 if e == 0 else (m | 1 << 23) * 2.0 ** (e - 150)
    return -mag if s else mag


@dataclass(frozen=True)
class Fp32Word:
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF_FFFF:
            raise ValueError(f"not a 32-bit pattern: {self.bits}")

    @classmethod
    def from_float(cls, x: float) -> Fp32Word:
        return cls(bits_of(x))

    @property
    def sign(self) -> int:
        return self.bits >> 31

    @property
    def exponent(self) -> int:
        return (self.bits >> 23) & 0xFF

    @property
    def mantissa(self) -> int:
        return self.bits & FRAC_MASK

    @property
    def cls(self) -> str:
        return classify(self.exponent, self.mantissa)

    def __float__(self):
        return float_of(self.bits)

    def __repr__(self):
        return f"Fp32Word(0x{self.bits:08X})"


def round_pack(sign: int, product: int, lsb_exponent: int) -> int:
    """Round ``product * 2**lsb_exponent`` to binary32, ties to even.

    Handles overflow to infinity and gradual underflow.
    """
    if product == 0:
        return sign << 31
    lead = lsb_exponent + product.bit_length() - 1
    q = max(lead - 23, -149)  # exponent of the result's LSB
    shift = q - lsb_exponent
    if shift <= 0:
        m = product << -shift
    else:
        m = product >> shift
        rem = product & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and m & 1):
            m += 1
    if m >> 24:
        m >>= 1
        q += 1
    if m < (1 << 23):
        return (sign << 31) | m
    biased = q + 150
    if biased >= 0xFF:
        return (sign << 31) | POS_INF
    return (sign << 31) | (biased << 23) | (m - (1 << 23))


def special_product(a: int, b: int) -> int | None:
    """Result for NaN / infinity / zero operands, else ``None``.

    NaN selection follows x86 SSE: the first NaN operand is returned quieted;
    ``inf * 0`` yields the default NaN.
    """
    sa, ea, ma, ca = decode(a)
    sb, eb, mb, cb = decode(b)
    sign = sa ^ sb
    if ca == NAN:
        return a | QUIET_BIT
    if cb == NAN:
        return b | QUIET_BIT
    if ca == INFINITY or cb == INFINITY:
        if ca == ZERO or cb == ZERO:
            return DEFAULT_NAN
        return (sign << 31) | POS_INF
    if ca == ZERO or cb == ZERO:
        return sign << 31
    return None


def fp32_multiply(a: int, b: int, cfg: booth.MultiplierConfig | str = booth.EXACT_CONFIG) -> int:
    """Multiply two binary32 words; ``a`` is the Booth multiplicand."""
    special = special_product(a, b)
    if special is not None:
        return special
    sa, ea, _, _ = decode(a)
    sb, eb, _, _ = decode(b)
    product = booth.mantissa_multiply(significand(a), significand(b), cfg)
    lsb = max(ea, 1) + max(eb, 1) - 2 * BIAS - 46
    return round_pack(sa ^ sb, product, lsb)
