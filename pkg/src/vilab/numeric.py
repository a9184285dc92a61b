"""Ordered-field scalars with three interchangeable arithmetic backends.

Scalars are plain Python number objects so that ``+ - * /`` and comparisons
work without wrappers:

* ``rational`` -> :class:`fractions.Fraction` (exact),
* ``bigfloat`` -> :class:`gmpy2.mpfr` rounded to a fixed precision,
* ``double``   -> :class:`float`.

Big-float arithmetic rounds to whatever gmpy2 context is active, so every
computation on ``bigfloat`` scalars must run inside :meth:`Backend.context`.
"""

from __future__ import annotations

import contextlib
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Union

import gmpy2

Scalar = Union[Fraction, "gmpy2.mpfr", float]

RATIONAL = "rational"
BIGFLOAT = "bigfloat"
DOUBLE = "double"
KINDS = (RATIONAL, BIGFLOAT, DOUBLE)


class ScalarFormatError(ValueError):
    """A scalar string does not follow the grammar.

    ``position`` is the 0-based index of the first offending character.
    """

    def __init__(self, text: str, position: int, reason: str):
        self.text = text
        self.position = position
        self.reason = reason
        super().__init__(f"{reason} at position {position} in {text!r}")


class UnrepresentableError(ValueError):
    """The requested value cannot be represented in the chosen backend."""


def _ieee_double_context():
    # 53-bit significand with the binary64 exponent range and subnormals
    return gmpy2.context(
        precision=53,
        emin=-1073,
        emax=1024,
        subnormalize=True,
        round=gmpy2.RoundToNearest,
    )


@dataclass(frozen=True)
class Backend:
    """Arithmetic backend descriptor; ``precision_bits`` is used by bigfloat only."""

    kind: str
    precision_bits: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == BIGFLOAT:
            if not isinstance(self.precision_bits, int) or self.precision_bits < 2:
                raise ValueError("bigfloat backend needs precision_bits >= 2")
        elif self.precision_bits is not None:
            raise ValueError(f"{self.kind} backend takes no precision_bits")

    @classmethod
    def rational(cls) -> Backend:
        return cls(RATIONAL)

    @classmethod
    def bigfloat(cls, precision_bits: int) -> Backend:
        return cls(BIGFLOAT, precision_bits)

    @classmethod
    def double(cls) -> Backend:
        return cls(DOUBLE)

    @property
    def exact(self) -> bool:
        return self.kind == RATIONAL

    @property
    def bits(self) -> int | None:
        """Significand width in bits, ``None`` for exact arithmetic."""
        if self.kind == BIGFLOAT:
            return self.precision_bits
        if self.kind == DOUBLE:
            return 53
        return None

    def __str__(self) -> str:
        if self.kind == BIGFLOAT:
            return f"bigfloat{self.precision_bits}"
        return self.kind

    @contextlib.contextmanager
    def context(self) -> Iterator[None]:
        """Activate the rounding context; a no-op for rational and double."""
        if self.kind != BIGFLOAT:
            yield
            return
        with gmpy2.context(
            precision=self.precision_bits,
            round=gmpy2.RoundToNearest,
            trap_divzero=True,
            trap_invalid=True,
        ):
            yield

    def scalar_type(self) -> type:
        return {RATIONAL: Fraction, BIGFLOAT: type(gmpy2.mpfr(0)), DOUBLE: float}[self.kind]

    def owns(self, value) -> bool:
        """True if ``value`` is a scalar of this backend (and precision)."""
        if self.kind == BIGFLOAT:
            return isinstance(value, type(gmpy2.mpfr(0))) and value.precision == self.precision_bits
        return type(value) is self.scalar_type()

    def convert(self, value) -> Scalar:
        """Convert an int, Fraction, float, mpfr or scalar string into this backend.

        Conversions are exact for ``rational`` and correctly rounded otherwise.
        """
        if isinstance(value, str):
            return self.convert(parse_exact(value))
        if self.kind == RATIONAL:
            if isinstance(value, float) and not math.isfinite(value):
                raise UnrepresentableError(f"{value!r} is not a rational number")
            if isinstance(value, type(gmpy2.mpfr(0))):
                value = value.as_integer_ratio()
                return Fraction(int(value[0]), int(value[1]))
            return Fraction(value)
        if isinstance(value, Fraction):
            value = gmpy2.mpq(value.numerator, value.denominator)
        if self.kind == DOUBLE:
            if isinstance(value, float):
                return value
            with _ieee_double_context():
                return float(gmpy2.mpfr(value))
        with self.context():
            return gmpy2.mpfr(value)

    @property
    def zero(self) -> Scalar:
        return self.convert(0)

    @property
    def one(self) -> Scalar:
        return self.convert(1)

    def format(self, value: Scalar) -> str:
        """Serialize a scalar of this backend to its exact string form."""
        if self.kind == RATIONAL:
            value = Fraction(value)
            return f"{value.numerator}/{value.denominator}"
        if self.kind == DOUBLE:
            return repr(float(value))
        return _format_hex(value, self.precision_bits)

    def parse(self, text: str) -> Scalar:
        return self.convert(parse_exact(text))

    def to_json(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == BIGFLOAT:
            doc["precision_bits"] = self.precision_bits
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> Backend:
        return cls(doc["kind"], doc.get("precision_bits"))

    @classmethod
    def from_name(cls, name: str, precision_bits: int | None = None) -> Backend:
        """Build a backend from a CLI-style name such as ``bigfloat`` or ``bigfloat128``."""
        match = re.fullmatch(r"(rational|double|bigfloat)(\d+)?", name)
        if match is None:
            raise ValueError(f"unknown backend {name!r}")
        kind, digits = match.groups()
        if kind == BIGFLOAT:
            bits = int(digits) if digits else precision_bits
            if bits is None:
                raise ValueError("bigfloat backend needs a precision")
            return cls(BIGFLOAT, bits)
        if digits:
            raise ValueError(f"{kind} backend takes no precision")
        return cls(kind)


# ---------------------------------------------------------------------------
# string grammar

_HEX_DIGITS = "0123456789abcdefABCDEF"


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def fail(self, reason: str):
        raise ScalarFormatError(self.text, self.pos, reason)

    def sign(self) -> int:
        ch = self.peek()
        if ch in ("+", "-"):
            self.pos += 1
            return -1 if ch == "-" else 1
        return 1

    def digits(self, alphabet: str = "0123456789", required: bool = True) -> str:
        start = self.pos
        while self.peek() and self.peek() in alphabet:
            self.pos += 1
        if required and self.pos == start:
            self.fail("expected digit")
        return self.text[start:self.pos]

    def expect(self, chars: str, reason: str):
        if not self.peek() or self.peek() not in chars:
            self.fail(reason)
        self.pos += 1

    def end(self):
        if self.pos != len(self.text):
            self.fail("unexpected character")


def parse_exact(text: str) -> Fraction:
    """Parse a scalar string into the exact rational number it denotes.

    Accepted forms: ``p/q`` or ``p`` (rational), ``[-]0xH.HHHp[+-]E@B``
    (big-float, ``B`` the significand precision) and plain decimals such as
    ``0.9`` or ``1e-3``.  Errors carry the offending position.
    """
    if not isinstance(text, str):
        raise TypeError(f"scalar string expected, got {type(text).__name__}")
    rd = _Reader(text)
    sign = rd.sign()
    if text[rd.pos:rd.pos + 2] in ("0x", "0X"):
        rd.pos += 2
        whole = rd.digits(_HEX_DIGITS)
        frac = ""
        if rd.peek() == ".":
            rd.pos += 1
            frac = rd.digits(_HEX_DIGITS, required=False)
        rd.expect("pP", "expected binary exponent 'p'")
        exp_sign = rd.sign()
        exponent = exp_sign * int(rd.digits())
        rd.expect("@", "expected '@' before precision")
        prec_pos = rd.pos
        precision = int(rd.digits())
        rd.end()
        if precision < 1:
            raise ScalarFormatError(text, prec_pos, "precision must be positive")
        mantissa = int(whole + frac, 16)
        exponent -= 4 * len(frac)
        significant = mantissa >> ((mantissa & -mantissa).bit_length() - 1) if mantissa else 0
        if significant.bit_length() > precision:
            raise ScalarFormatError(text, prec_pos, "significand wider than precision")
        value = Fraction(mantissa) * (Fraction(2) ** exponent)
        return sign * value
    start = rd.pos
    if rd.peek() == ".":
        rd.pos += 1
        rd.digits()
    else:
        rd.digits()
        if rd.peek() == "/":
            rd.pos += 1
            den_pos = rd.pos
            den = int(rd.digits())
            rd.end()
            if den == 0:
                raise ScalarFormatError(text, den_pos, "zero denominator")
            return sign * Fraction(int(text[start:den_pos - 1]), den)
        if rd.peek() == ".":
            rd.pos += 1
            rd.digits(required=False)
    if rd.peek() in ("e", "E"):
        rd.pos += 1
        rd.sign()
        rd.digits()
    rd.end()
    return sign * Fraction(text[start:])


def _format_hex(value, precision_bits: int) -> str:
    if not gmpy2.is_finite(value):
        raise UnrepresentableError(f"non-finite big-float {value}")
    if value == 0:
        return f"0x0p+0@{precision_bits}"
    mantissa, exponent = value.as_mantissa_exp()
    mantissa, exponent = int(mantissa), int(exponent)
    sign = "-" if mantissa < 0 else ""
    mantissa = abs(mantissa)
    frac_bits = mantissa.bit_length() - 1
    exponent += frac_bits
    frac = mantissa - (1 << frac_bits)
    pad = -frac_bits % 4
    if frac_bits == 0:
        return f"{sign}0x1p{exponent:+d}@{precision_bits}"
    ndigits = (frac_bits + pad) // 4
    digits = f"{frac << pad:0{ndigits}x}".rstrip("0")
    if not digits:
        return f"{sign}0x1p{exponent:+d}@{precision_bits}"
    return f"{sign}0x1.{digits}p{exponent:+d}@{precision_bits}"


# ---------------------------------------------------------------------------
# operations


def exp_neg(m: int, backend: Backend) -> Scalar:
    """Return ``e**-m`` correctly rounded in ``backend``.

    Rounding is to nearest-even at the backend precision; doubles follow
    IEEE-754 binary64 including gradual underflow (0.0 for ``m >= 746``).
    """
    if not isinstance(m, int) or m < 1:
        raise ValueError(f"exp_neg needs an integer m >= 1, got {m!r}")
    if backend.kind == RATIONAL:
        raise UnrepresentableError(
            "irrational value unrepresentable; use DyadicReward variant"
        )
    if backend.kind == DOUBLE:
        with _ieee_double_context():
            return float(gmpy2.exp(gmpy2.mpfr(-m)))
    with backend.context():
        return gmpy2.exp(gmpy2.mpfr(-m))


def power(base: Scalar, exponent: int) -> Scalar:
    """``base ** exponent`` for ``0 < base < 1`` by binary exponentiation.

    Exact for Fractions. Big-float callers must hold the backend context.
    """
    if not 0 < base < 1:
        raise ValueError(f"power needs 0 < base < 1, got {base}")
    if not isinstance(exponent, int) or exponent < 0:
        raise ValueError(f"power needs a nonnegative integer exponent, got {exponent!r}")
    result = type(base)(1)
    square = base
    while exponent:
        if exponent & 1:
            result = result * square
        exponent >>= 1
        if exponent:
            square = square * square
    return result
