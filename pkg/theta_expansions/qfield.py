"""Exact arithmetic in the real quadratic field Q(sqrt m)."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Literal

from theta_expansions.errors import ParameterError

ArithOp = Literal["add", "sub", "mul"]
Rational = int | Fraction

_NUMBER = r"\d+(?:/\d+)?"
_RADICAL = r"\*?(?:√|sqrt)\(?(?P<m>\d+)\)?"
_QUAD_PATTERN = re.compile(
    rf"^(?P<a>[+-]?{_NUMBER})(?P<b>[+-]{_NUMBER}){_RADICAL}$"
)
_PURE_RADICAL_PATTERN = re.compile(rf"^(?P<b>[+-]?{_NUMBER}){_RADICAL}$")
_RATIONAL_PATTERN = re.compile(rf"^[+-]?{_NUMBER}$")


def is_perfect_square(n: int) -> bool:
    return n >= 0 and math.isqrt(n) ** 2 == n


@total_ordering
@dataclass(frozen=True, eq=False)
class QuadNumber:
    """The number ``a + b*sqrt(m)`` with rational ``a``, ``b``.

    ``m`` must be at least 2 and not a perfect square, which makes the
    representation unique: two values with equal ``m`` are equal exactly when
    their coefficients are.
    """

    a: Fraction
    b: Fraction
    m: int

    def __post_init__(self) -> None:
        if isinstance(self.m, bool) or not isinstance(self.m, int):
            raise ParameterError(f"m must be an integer, got {self.m!r}", m=str(self.m))
        if self.m < 2 or is_perfect_square(self.m):
            raise ParameterError(
                f"m must be >= 2 and not a perfect square, got {self.m}", m=self.m
            )
        object.__setattr__(self, "a", Fraction(self.a))
        object.__setattr__(self, "b", Fraction(self.b))

    @classmethod
    def rational(cls, value: Rational, m: int) -> QuadNumber:
        return cls(Fraction(value), Fraction(0), m)

    @classmethod
    def sqrt(cls, m: int) -> QuadNumber:
        return cls(Fraction(0), Fraction(1), m)

    def _coerce(self, other: object) -> QuadNumber | None:
        if isinstance(other, QuadNumber):
            if other.m != self.m:
                raise ParameterError(
                    f"cannot combine elements of Q(√{self.m}) and Q(√{other.m})",
                    m=self.m,
                    other_m=other.m,
                )
            return other
        if isinstance(other, (int, Fraction)) and not isinstance(other, bool):
            return QuadNumber.rational(other, self.m)
        return None

    def __add__(self, other: object) -> QuadNumber:
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return QuadNumber(self.a + v.a, self.b + v.b, self.m)

    def __radd__(self, other: object) -> QuadNumber:
        return self.__add__(other)

    def __neg__(self) -> QuadNumber:
        return QuadNumber(-self.a, -self.b, self.m)

    def __sub__(self, other: object) -> QuadNumber:
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return QuadNumber(self.a - v.a, self.b - v.b, self.m)

    def __rsub__(self, other: object) -> QuadNumber:
        return (-self).__add__(other)

    def __mul__(self, other: object) -> QuadNumber:
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return QuadNumber(
            self.a * v.a + self.b * v.b * self.m,
            self.a * v.b + self.b * v.a,
            self.m,
        )

    def __rmul__(self, other: object) -> QuadNumber:
        return self.__mul__(other)

    def __truediv__(self, other: object) -> QuadNumber:
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return self * q_inv(v)

    def __rtruediv__(self, other: object) -> QuadNumber:
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return v * q_inv(self)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, QuadNumber):
            return (self.m, self.a, self.b) == (other.m, other.a, other.b)
        if isinstance(other, (int, Fraction)):
            return self.b == 0 and self.a == other
        return NotImplemented

    def __lt__(self, other: object) -> bool:
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return q_sign(self - v) < 0

    def __hash__(self) -> int:
        if self.b == 0:
            return hash(self.a)
        return hash((self.a, self.b, self.m))

    def __bool__(self) -> bool:
        return bool(self.a) or bool(self.b)

    def __float__(self) -> float:
        if self.b == 0:
            return float(self.a)
        if self.a == 0 or (self.a > 0) == (self.b > 0):
            return float(self.a) + float(self.b) * math.sqrt(self.m)
        # opposite signs: divide the exact norm by the cancellation-free conjugate
        return float(self.norm()) / (float(self.a) - float(self.b) * math.sqrt(self.m))

    def __repr__(self) -> str:
        return f"QuadNumber({format_quad(self)!r})"

    def __str__(self) -> str:
        return format_quad(self)

    def conjugate(self) -> QuadNumber:
        return QuadNumber(self.a, -self.b, self.m)

    def norm(self) -> Fraction:
        return self.a * self.a - self.b * self.b * self.m


def q_arith(op: ArithOp, u: QuadNumber, v: QuadNumber) -> QuadNumber:
    if u.m != v.m:
        raise ParameterError(
            f"mismatched fields Q(√{u.m}) and Q(√{v.m})", m=u.m, other_m=v.m
        )
    if op == "add":
        return u + v
    if op == "sub":
        return u - v
    if op == "mul":
        return u * v
    raise ParameterError(f"unknown field operation {op!r}", op=str(op))


def q_inv(u: QuadNumber) -> QuadNumber:
    if not u:
        raise ZeroDivisionError("QuadNumber division by zero")
    norm = u.norm()
    assert norm != 0, "non-zero element with zero norm: m must be a square"
    return QuadNumber(u.a / norm, -u.b / norm, u.m)


def q_sign(u: QuadNumber) -> int:
    a, b = u.a, u.b
    if b == 0:
        return (a > 0) - (a < 0)
    if a == 0 or (a > 0) == (b > 0):
        return 1 if b > 0 else -1
    # opposite signs: the larger square wins
    if a * a > b * b * u.m:
        return 1 if a > 0 else -1
    return 1 if b > 0 else -1


def _floor_sqrt(value: Fraction) -> int:
    # floor(sqrt(r)) == isqrt(floor(r)) for r >= 0
    return math.isqrt(value.numerator // value.denominator)


def q_floor(u: QuadNumber) -> int:
    if u.b == 0:
        return math.floor(u.a)
    root = _floor_sqrt(u.b * u.b * u.m)
    # b*sqrt(m) is irrational, so for b < 0 its floor is -(ceil|b|sqrt(m)) = -root - 1
    radical_floor = root if u.b > 0 else -root - 1
    candidate = math.floor(u.a + radical_floor) + 1
    if q_sign(u - candidate) >= 0:
        return candidate
    return candidate - 1


def format_quad(u: QuadNumber) -> str:
    sign = "+" if u.b >= 0 else "-"
    return f"{u.a}{sign}{abs(u.b)}√{u.m}"


def _normalize_text(text: str) -> str:
    return "".join(text.split()).replace("−", "-")


def parse_quad(text: str) -> QuadNumber:
    normalized = _normalize_text(text)
    match = _QUAD_PATTERN.match(normalized)
    if match is not None:
        return QuadNumber(
            Fraction(match["a"]), Fraction(match["b"]), int(match["m"])
        )
    match = _PURE_RADICAL_PATTERN.match(normalized)
    if match is not None:
        return QuadNumber(Fraction(0), Fraction(match["b"]), int(match["m"]))
    raise ParameterError(f"not a quadratic-field number: {text!r}", text=text)


def parse_point(text: str) -> Fraction | QuadNumber | float:
    """Parse ``1/2``, ``0+1/2√2`` or a decimal such as ``0.25``.

    Rationals and field elements are exact; anything else is read as a float.
    """
    normalized = _normalize_text(text)
    if _RATIONAL_PATTERN.match(normalized):
        return Fraction(normalized)
    if "√" in normalized or "sqrt" in normalized:
        return parse_quad(normalized)
    try:
        return float(normalized)
    except ValueError as exc:
        raise ParameterError(f"cannot parse point {text!r}", text=text) from exc


def to_decimal(u: QuadNumber, places: int) -> str:
    """Exact decimal expansion of ``u`` rounded toward minus infinity."""
    if places < 0:
        raise ParameterError("places must be non-negative", places=places)
    scaled = q_floor(u * (10**places))
    sign = "-" if scaled < 0 else ""
    text = str(abs(scaled)).rjust(places + 1, "0")
    if places == 0:
        return f"{sign}{text}"
    return f"{sign}{text[:-places]}.{text[-places:]}"
