from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meterguard.errors import ProtocolError, RangeOverflow, ZeroInverse
from meterguard.field import (MERSENNE61, Field, FieldElement, FixedPointCodec, decode_fixed, encode_fixed,
                              fe_add, fe_inv, fe_mul, mersenne_reduce, round_half_away)

P = MERSENNE61
elems = st.integers(min_value=0, max_value=P - 1)


def test_mersenne_is_prime_2_61_minus_1():
    assert P == 2**61 - 1
    assert pow(3, P - 1, P) == 1


@given(st.integers(min_value=0, max_value=(P - 1) ** 2))
def test_mersenne_reduce_matches_mod(x):
    assert mersenne_reduce(x) == x % P


def test_add_wraps():
    assert fe_add(FieldElement(P - 1), FieldElement(2)).value == 1


def test_mul_max_times_max():
    assert fe_mul(FieldElement(P - 1), FieldElement(P - 1)).value == 1


def test_inverse_of_two():
    assert fe_inv(FieldElement(2)).value == (P + 1) // 2


def test_inverse_of_zero_raises():
    with pytest.raises(ZeroInverse):
        fe_inv(FieldElement(0))
    with pytest.raises(ZeroDivisionError):
        FieldElement(0, 251).inverse()


@settings(max_examples=300)
@given(elems, elems, elems)
def test_field_axioms(a, b, c):
    A, B, C = FieldElement(a), FieldElement(b), FieldElement(c)
    assert (A + B).value == (a + b) % P
    assert (A * B).value == a * b % P
    assert (A * (B + C)).value == (A * B + A * C).value
    assert ((A * B) * C).value == (A * (B * C)).value
    assert (A - A).value == 0
    assert (A + (-A)).value == 0
    if a:
        assert (A * A.inverse()).value == 1


def test_small_field_inverses_exhaustive(f251):
    for a in range(1, 251):
        assert (f251.element(a) * f251.element(a).inverse()).value == 1


def test_element_rejects_out_of_range():
    with pytest.raises(ValueError):
        FieldElement(P)


def test_mixed_moduli_rejected():
    with pytest.raises(ValueError):
        FieldElement(1, 251) + FieldElement(1, P)


@given(elems)
def test_element_wire_round_trip(a):
    data = FieldElement(a).to_bytes()
    assert len(data) == 8
    assert data == a.to_bytes(8, "little")
    assert FieldElement.from_bytes(data).value == a


def test_unpack_rejects_non_canonical(f251):
    with pytest.raises(ProtocolError):
        f251.unpack((251).to_bytes(8, "little"))
    with pytest.raises(ProtocolError):
        f251.unpack(b"\x00" * 7)


def test_pack_unpack_vector(f61):
    v = f61.array([0, 1, P - 1, 12345])
    assert list(f61.unpack(f61.pack(v))) == list(v)


def test_expand_is_deterministic_and_nonzero(f251):
    a = f251.expand(b"seed", "x", 500, nonzero=True)
    assert list(a) == list(f251.expand(b"seed", "x", 500, nonzero=True))
    assert all(1 <= int(v) < 251 for v in a)
    assert list(a) != list(f251.expand(b"seed", "y", 500, nonzero=True))


def test_random_in_range(f251):
    r = f251.random(np.random.default_rng(0), (1000,), nonzero=True)
    assert min(r) >= 1 and max(r) < 251


# -- fixed point ---------------------------------------------------------------

def test_round_half_away():
    assert round_half_away(5, 2) == 3
    assert round_half_away(-5, 2) == -3
    assert round_half_away(4, 3) == 1
    assert round_half_away(-4, 3) == -1


def test_encode_examples(codec):
    assert codec.encode(1.5).value == 1500
    assert codec.encode(0.0005).value == 1  # half away from zero
    assert codec.encode(-0.0005).value == P - 1
    assert codec.encode(-1).value == P - 1000


def test_decode_negative(codec):
    assert decode_fixed(encode_fixed(-2.25)) == Fraction(-9, 4)


def test_product_carries_scale_squared(codec):
    prod = codec.encode(1.5) * codec.encode(2.0)
    assert codec.decode(prod, power=2) == 3
    assert codec.decode_rounded(prod, power=2) == 3000


def test_decimal_input_exact(codec):
    assert codec.scaled_int(Decimal("0.1235")) == 124
    assert codec.scaled_int(Decimal("-0.1235")) == -124


def test_overflow_and_non_finite():
    small = FixedPointCodec(1000, 251)
    assert small.scaled_int(0.125) == 125
    with pytest.raises(RangeOverflow):
        small.scaled_int(0.126)
    with pytest.raises(RangeOverflow):
        FixedPointCodec().scaled_int(float("inf"))


@given(st.integers(min_value=-(10**12), max_value=10**12))
def test_codec_round_trip_on_grid(n):
    codec = FixedPointCodec()
    x = Fraction(n, 1000)
    assert codec.decode(codec.encode(x)) == x


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_codec_error_at_most_half_ulp(x):
    codec = FixedPointCodec()
    assert abs(codec.decode(codec.encode(x)) - Fraction(x)) <= Fraction(1, 2000)
