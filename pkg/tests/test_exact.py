from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from sgain.exact import (
    decimal_string,
    is_interval,
    less_than,
    lower,
    mul,
    rational_power,
    serialize,
    to_fraction,
    to_interval,
    upper,
)


def test_to_fraction_inputs():
    assert to_fraction("3/4") == Fraction(3, 4)
    assert to_fraction(2) == 2
    assert to_fraction(0.5) == Fraction(1, 2)
    with pytest.raises(TypeError):
        to_fraction(True)
    with pytest.raises(ValueError):
        to_fraction(float("inf"))


def test_exact_roots_stay_rational():
    assert rational_power(Fraction(1, 8), Fraction(1, 3)) == Fraction(1, 2)
    assert is_interval(rational_power(Fraction(125, 36), Fraction(1, 2)))
    assert rational_power(Fraction(9, 4), Fraction(3, 2)) == Fraction(27, 8)


def test_interval_enclosure_of_irrational_power():
    x = rational_power(Fraction(2, 3), Fraction(2, 3))
    assert lower(x) <= (2 / 3) ** (2 / 3) <= upper(x)
    assert upper(x) - lower(x) < 1e-15


def test_mul_mixes_fractions_and_intervals():
    assert mul(Fraction(1, 2), 3) == Fraction(3, 2)
    m = mul(Fraction(1, 24), rational_power(Fraction(2, 3), Fraction(2, 3)))
    assert is_interval(m)
    assert abs(upper(m) - (2 / 3) ** (2 / 3) / 24) < 1e-15


def test_serialize_and_decimal():
    doc = serialize(Fraction(1, 3))
    assert doc["rational"] == "1/3"
    assert doc["decimal"].startswith("0.333333333333333333333333333")
    assert len(doc["decimal"].replace("0.", "")) == 30
    ivdoc = serialize(to_interval(Fraction(1, 3)) ** to_interval(Fraction(1, 2)))
    assert ivdoc["rational"] is None and len(ivdoc["interval"]) == 2
    assert decimal_string(Fraction(5, 8)) == "0.625"


@given(st.fractions(min_value=-100, max_value=100, max_denominator=10**6))
def test_upper_lower_bracket_fraction(x):
    assert Fraction(lower(x)) <= x <= Fraction(upper(x))


@given(st.fractions(min_value=-10, max_value=10, max_denominator=1000),
       st.fractions(min_value=-10, max_value=10, max_denominator=1000))
def test_less_than_matches_fraction_order(a, b):
    assert less_than(a, b) == (a < b)
