import math
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from approxfp import fp32
from approxfp.fp32 import Fp32Word, classify, decode, encode, fp32_multiply, round_pack, special_product
from oracles import SPECIALS, fp_mismatches

words = st.integers(0, 0xFFFF_FFFF)
finite_words = words.filter(lambda w: (w >> 23) & 0xFF != 0xFF)


@pytest.mark.parametrize(
    "word, cls",
    [
        (0x0000_0000, "zero"),
        (0x8000_0000, "zero"),
        (0x0000_0001, "subnormal"),
        (0x007F_FFFF, "subnormal"),
        (0x0080_0000, "normal"),
        (0x3F80_0000, "normal"),
        (0x7F80_0000, "infinity"),
        (0xFF80_0000, "infinity"),
        (0x7FC0_0000, "nan"),
        (0x7F80_0001, "nan"),
    ],
)
def test_classify(word, cls):
    assert decode(word).cls == cls
    assert Fp32Word(word).cls == cls


def test_decode_one():
    assert decode(0x3F80_0000) == (0, 127, 0, "normal")
    assert decode(0xC000_0000) == (1, 128, 0, "normal")


@given(words)
def test_encode_decode_roundtrip(w):
    s, e, m, _ = decode(w)
    assert encode(s, e, m) == w


@pytest.mark.parametrize("args", [(2, 0, 0), (0, 256, 0), (0, 0, 1 << 23), (0, -1, 0)])
def test_encode_rejects_out_of_range(args):
    with pytest.raises(ValueError):
        encode(*args)


def test_significand():
    assert fp32.significand(0x3F80_0000) == 1 << 23
    assert fp32.significand(0x0000_0001) == 1
    assert fp32.significand(0x0000_0000) == 0
    with pytest.raises(ValueError):
        fp32.significand(0x7F80_0000)


def test_word_validation_and_repr():
    with pytest.raises(ValueError):
        Fp32Word(1 << 32)
    w = Fp32Word.from_float(-2.5)
    assert (w.sign, w.exponent, w.mantissa) == (1, 128, 0x200000)
    assert float(w) == -2.5
    assert repr(w) == "Fp32Word(0xC0200000)"


@given(finite_words)
def test_value_matches_struct(w):
    assert fp32.value(w) == struct.unpack("<f", struct.pack("<I", w))[0]


def test_classify_direct():
    assert classify(0, 0) == "zero"
    assert classify(0xFF, 1) == "nan"


@pytest.mark.parametrize(
    "product, lsb, expected",
    [
        (1, -149, 0x0000_0001),  # exactly the smallest subnormal
        (1, -150, 0x0000_0000),  # half of it ties to even (zero)
        (3, -150, 0x0000_0002),  # 1.5 ulp rounds to 2
        (1 << 23, -23, 0x3F80_0000),
        ((1 << 24) - 1, -24, 0x3F7F_FFFF),  # 24 significant bits: exact
        ((1 << 25) - 1, -25, 0x3F80_0000),  # tie between odd and 1.0 goes up a binade
        (1, 128, 0x7F80_0000),  # overflow
    ],
)
def test_round_pack_cases(product, lsb, expected):
    assert round_pack(0, product, lsb) == expected
    assert round_pack(1, product, lsb) == expected | 0x8000_0000


def test_round_pack_zero_keeps_sign():
    assert round_pack(1, 0, 0) == 0x8000_0000


def test_special_rules():
    qa, qb = 0x7FC0_0001, 0x7FC0_0002
    assert special_product(qa, qb) == qa  # first NaN wins
    assert special_product(0x3F80_0000, 0x7F80_0001) == 0x7FC0_0001  # quieted
    assert special_product(0x7F80_0000, 0x0000_0000) == fp32.DEFAULT_NAN
    assert special_product(0xFF80_0000, 0x3F80_0000) == 0xFF80_0000
    assert special_product(0x8000_0000, 0x3F80_0000) == 0x8000_0000
    assert special_product(0x3F80_0000, 0x4000_0000) is None


def test_scalar_reference_on_special_pairs():
    a = [int(x) for x in SPECIALS]
    pa, pb, got = [], [], []
    for x in a:
        for y in a:
            pa.append(x)
            pb.append(y)
            got.append(fp32_multiply(x, y))
    assert fp_mismatches(pa, pb, got).size == 0


@given(finite_words, finite_words)
def test_scalar_reference_matches_platform(a, b):
    got = fp32_multiply(a, b)
    assert fp_mismatches([a], [b], [got]).size == 0


def test_scalar_reference_subnormal_products():
    # products that land in or just above the subnormal range
    cases = [(0x0080_0000, 0x3F00_0000), (0x0080_0001, 0x3F7F_FFFF), (0x2000_0001, 0x1FFF_FFFF), (0x0000_0003, 0x3FC0_0000)]
    for a, b in cases:
        assert fp_mismatches([a], [b], [fp32_multiply(a, b)]).size == 0


def test_approximate_config_keeps_special_rules():
    assert fp32_multiply(0x7F80_0000, 0x0000_0000, "PMNI") == fp32.DEFAULT_NAN
    assert fp32_multiply(0x8000_0000, 0x3F80_0000, "NMSI") == 0x8000_0000
    x = fp32_multiply(0x3FC0_0000, 0x4020_0000, "PMCSI")
    assert math.isclose(fp32.float_of(x), 3.75, rel_tol=1e-6)
