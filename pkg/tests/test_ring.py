from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynofe.errors import DimensionError, RangeError
from dynofe.ring import (FixedPointCodec, Modulus, RingVector, centered_lift, decode_fixed,
                         decode_vector, encode_fixed, encode_vector, random_vector,
                         ring_inner_product, round_half_away, stacked_inner_product)

BITS = [16, 32, 63, 64, 72, 127]


@st.composite
def vector_pairs(draw):
    bits = draw(st.sampled_from(BITS))
    m = draw(st.integers(1, 30))
    elem = st.integers(0, (1 << bits) - 1)
    xs = draw(st.lists(elem, min_size=m, max_size=m))
    ys = draw(st.lists(elem, min_size=m, max_size=m))
    return Modulus(bits), xs, ys


def test_modulus_bounds():
    with pytest.raises(ValueError):
        Modulus(15)
    with pytest.raises(ValueError):
        Modulus(128)
    q = Modulus(72)
    assert q.q == 2**72 and q.half == 2**71 and q.nbytes == 9 and not q.native
    assert Modulus(64).native and Modulus(64).nbytes == 8


def test_centered_lift_edges():
    q = Modulus(16)
    assert centered_lift(0, q) == 0
    assert centered_lift(2**15 - 1, q) == 2**15 - 1
    assert centered_lift(2**15, q) == -2**15
    assert centered_lift(2**16 - 1, q) == -1


def test_from_signed_rejects_out_of_range():
    q = Modulus(16)
    assert q.from_signed(-2**15) == 2**15
    with pytest.raises(RangeError):
        q.from_signed(2**15)


@settings(max_examples=200, deadline=None)
@given(vector_pairs())
def test_arithmetic_matches_python_ints(case):
    modulus, xs, ys = case
    q = modulus.q
    x, y = RingVector.from_ints(xs, modulus), RingVector.from_ints(ys, modulus)
    assert (x + y).tolist() == [(a + b) % q for a, b in zip(xs, ys)]
    assert (x - y).tolist() == [(a - b) % q for a, b in zip(xs, ys)]
    assert (-x).tolist() == [(-a) % q for a in xs]
    assert ring_inner_product(x, y) == sum(a * b for a, b in zip(xs, ys)) % q


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(BITS), st.integers(1, 6), st.integers(1, 12), st.data())
def test_stacked_inner_product(bits, n, m, data):
    modulus = Modulus(bits)
    elem = st.integers(0, modulus.mask)
    rows = [data.draw(st.lists(elem, min_size=m, max_size=m)) for _ in range(2 * n)]
    xs = [RingVector.from_ints(r, modulus) for r in rows[:n]]
    ys = [RingVector.from_ints(r, modulus) for r in rows[n:]]
    expected = sum(a * b for xr, yr in zip(rows[:n], rows[n:]) for a, b in zip(xr, yr))
    assert stacked_inner_product(xs, ys) == expected % modulus.q


def test_length_and_modulus_mismatch():
    a = RingVector.zeros(3, Modulus(32))
    with pytest.raises(DimensionError):
        a + RingVector.zeros(4, Modulus(32))
    with pytest.raises(DimensionError):
        a + RingVector.zeros(3, Modulus(64))


def test_immutable():
    v = RingVector.zeros(2, Modulus(32))
    with pytest.raises(AttributeError):
        v.elems = None


def test_round_half_away_from_zero():
    assert round_half_away(Fraction(5, 2)) == 3
    assert round_half_away(Fraction(-5, 2)) == -3
    assert round_half_away(0.49999) == 0
    assert round_half_away(-0.5) == -1


def test_fixed_point_roundtrip_and_limits():
    q = Modulus(64)
    codec = FixedPointCodec(10**6, q)
    assert encode_fixed(-0.0000015, codec) == q.from_signed(-2)
    assert decode_fixed(encode_fixed(-1.25, codec), codec) == -1.25
    with pytest.raises(ValueError):
        FixedPointCodec(2**15, Modulus(16))
    with pytest.raises(RangeError):
        encode_fixed(1e20, codec)
    with pytest.raises(RangeError):
        encode_fixed(float("nan"), codec)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1000, 1000, allow_nan=False), min_size=1, max_size=20))
def test_vector_encoding_matches_scalar(values):
    codec = FixedPointCodec(10**6, Modulus(64))
    vec = encode_vector(values, codec)
    assert vec.tolist() == [encode_fixed(v, codec) for v in values]
    assert np.allclose(decode_vector(vec, codec.scale), values, atol=5e-7)


def test_random_vector_in_range_and_spread():
    for bits in (16, 72):
        modulus = Modulus(bits)
        v = random_vector(4000, modulus, np.random.default_rng(0))
        vals = [int(e) for e in v]
        assert all(0 <= e < modulus.q for e in vals)
        # top bit set about half of the time
        assert 0.45 < np.mean([e >= modulus.half for e in vals]) < 0.55
