"""Exact and interval number helpers.

Rational quantities are carried as :class:`fractions.Fraction`. Quantities
that become irrational (fractional powers, square roots) are carried as
``mpmath.iv`` intervals so that upper bounds stay rigorous.
"""

from decimal import Decimal, localcontext
from fractions import Fraction
import math
import numbers

import mpmath
from mpmath import iv

iv.prec = 160

DECIMAL_DIGITS = 30


def to_fraction(x) -> Fraction:
    """Convert ints, floats (exactly), Fractions and "p/q" strings."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, numbers.Integral):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, numbers.Real):
        xf = float(x)
        if not math.isfinite(xf):
            raise ValueError(f"non-finite value {x!r}")
        return Fraction(xf)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact number")


def is_interval(x) -> bool:
    return isinstance(x, type(iv.mpf(0)))


def to_interval(x):
    """Enclose an exact number in an mpmath interval."""
    if is_interval(x):
        return x
    fr = to_fraction(x)
    return iv.mpf(fr.numerator) / fr.denominator


def rational_power(base, exponent):
    """base**exponent for rational inputs; Fraction when exact, else an interval."""
    base = to_fraction(base)
    exponent = to_fraction(exponent)
    if exponent.denominator == 1:
        return base ** exponent.numerator
    if base == 0:
        if exponent <= 0:
            raise ZeroDivisionError("0 to a nonpositive power")
        return Fraction(0)
    if base < 0:
        raise ValueError("negative base with fractional exponent")
    # exact roots, e.g. (1/8)**(1/3)
    q = exponent.denominator
    num_root = _int_root(base.numerator, q)
    den_root = _int_root(base.denominator, q)
    if num_root is not None and den_root is not None:
        return Fraction(num_root, den_root) ** exponent.numerator
    return to_interval(base) ** to_interval(exponent)


def _int_root(n: int, q: int):
    r = round(n ** (1.0 / q))
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand ** q == n:
            return cand
    return None


def mul(*xs):
    """Product that stays a Fraction when every factor is rational."""
    if any(is_interval(x) for x in xs):
        out = iv.mpf(1)
        for x in xs:
            out = out * to_interval(x)
        return out
    out = Fraction(1)
    for x in xs:
        out *= to_fraction(x)
    return out


def upper(x) -> float:
    """A float that is >= x (rounded up)."""
    if is_interval(x):
        return float(mpmath.mpf(x.b))
    fr = to_fraction(x)
    f = float(fr)
    if Fraction(f) < fr:
        f = math.nextafter(f, math.inf)
    return f


def lower(x) -> float:
    """A float that is <= x (rounded down)."""
    if is_interval(x):
        return float(mpmath.mpf(x.a))
    fr = to_fraction(x)
    f = float(fr)
    if Fraction(f) > fr:
        f = math.nextafter(f, -math.inf)
    return f


def midpoint(x) -> float:
    if is_interval(x):
        return float(mpmath.mpf(x.mid))
    return float(to_fraction(x))


def less_than(x, bound) -> bool:
    """Rigorous x < bound: for intervals, the whole enclosure must lie below."""
    if is_interval(x):
        return bool(x.b < to_interval(bound).a)
    return to_fraction(x) < to_fraction(bound)


def decimal_string(x, digits: int = DECIMAL_DIGITS) -> str:
    if is_interval(x):
        return mpmath.nstr(mpmath.mpf(x.b), digits, min_fixed=-30, max_fixed=30)
    fr = to_fraction(x)
    with localcontext() as ctx:
        ctx.prec = digits
        return str(Decimal(fr.numerator) / Decimal(fr.denominator))


def serialize(x) -> dict:
    """JSON form: 30-digit decimal plus an exact rational when available.

    Irrational values report the upper end of their enclosure as the decimal
    and the enclosure itself under ``interval``.
    """
    if x is None:
        return None
    if is_interval(x):
        return {
            "decimal": decimal_string(x),
            "rational": None,
            "interval": [
                mpmath.nstr(mpmath.mpf(x.a), DECIMAL_DIGITS),
                mpmath.nstr(mpmath.mpf(x.b), DECIMAL_DIGITS),
            ],
        }
    fr = to_fraction(x)
    return {"decimal": decimal_string(fr), "rational": str(fr)}
