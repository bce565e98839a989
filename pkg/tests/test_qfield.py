import random
from fractions import Fraction

import pytest
from mpmath import mp, mpf, sqrt

from theta_expansions.errors import ParameterError
from theta_expansions.qfield import (
    QuadNumber,
    format_quad,
    parse_point,
    parse_quad,
    q_arith,
    q_floor,
    q_inv,
    q_sign,
    to_decimal,
)


def _q(a: int | Fraction, b: int | Fraction, m: int = 2) -> QuadNumber:
    return QuadNumber(Fraction(a), Fraction(b), m)


def _random_quads(count: int, m: int, seed: int = 7) -> list[QuadNumber]:
    rng = random.Random(seed)
    quads = []
    while len(quads) < count:
        a = Fraction(rng.randint(-50, 50), rng.randint(1, 12))
        b = Fraction(rng.randint(-50, 50), rng.randint(1, 12))
        if a or b:
            quads.append(QuadNumber(a, b, m))
    return quads


def test_arithmetic_examples() -> None:
    assert q_arith("add", _q(1, 0), _q(0, 1)) == _q(1, 1)
    assert q_arith("mul", _q(2, -1), _q(2, 1)) == _q(2, 0)
    assert q_arith("sub", _q(2, 0), _q(0, 1)) == _q(2, -1)


def test_arithmetic_rejects_mismatched_fields() -> None:
    with pytest.raises(ParameterError):
        q_arith("add", _q(1, 1, 2), _q(1, 1, 3))
    with pytest.raises(ParameterError):
        _ = _q(1, 1, 2) * _q(1, 1, 5)


@pytest.mark.parametrize("m", [0, 1, 4, 9])
def test_square_or_small_m_is_rejected(m: int) -> None:
    with pytest.raises(ParameterError):
        QuadNumber(Fraction(1), Fraction(1), m)


def test_inverse_examples() -> None:
    assert q_inv(_q(2, -1)) == _q(1, Fraction(1, 2))
    assert q_inv(_q(0, Fraction(1, 2))) == _q(0, 1)
    assert q_inv(_q(1, 0)) == _q(1, 0)


def test_inverse_of_zero_raises() -> None:
    with pytest.raises(ZeroDivisionError):
        q_inv(_q(0, 0))


@pytest.mark.parametrize("m", [2, 3, 5, 7])
def test_inverse_is_exact(m: int) -> None:
    for u in _random_quads(50, m):
        assert u * q_inv(u) == 1
        assert u / u == 1


def test_sign_examples() -> None:
    assert q_sign(_q(3, -2)) == 1
    assert q_sign(_q(Fraction(-3, 2), 1)) == -1
    assert q_sign(_q(0, 0)) == 0


def _reference_sign(u: QuadNumber) -> int:
    value = mpf(u.a.numerator) / u.a.denominator + (
        mpf(u.b.numerator) / u.b.denominator
    ) * sqrt(u.m)
    return (value > 0) - (value < 0)


def _pell_pairs(m: int, first: tuple[int, int], count: int) -> list[tuple[int, int]]:
    """Solutions of p^2 - m q^2 = +-1, so p - q sqrt(m) is about 1/(2p)."""
    x, y = first
    pairs = []
    p, q = x, y
    for _ in range(count):
        pairs.append((p, q))
        p, q = x * p + m * y * q, y * p + x * q
    return pairs


@pytest.mark.parametrize("m", [2, 3, 5])
def test_sign_matches_high_precision(m: int) -> None:
    rng = random.Random(100 + m)
    wide = [
        QuadNumber(
            Fraction(rng.randint(-10**6, 10**6), rng.randint(1, 10**4)),
            Fraction(rng.randint(-10**6, 10**6), rng.randint(1, 10**4)),
            m,
        )
        for _ in range(1_700)
    ]
    with mp.workdps(60):
        for u in [*_random_quads(1_700, m, seed=m), *wide]:
            assert q_sign(u) == _reference_sign(u), u


@pytest.mark.parametrize(("m", "first"), [(2, (1, 1)), (3, (2, 1)), (5, (2, 1))])
def test_sign_near_cancellation(m: int, first: tuple[int, int]) -> None:
    with mp.workdps(200):
        for p, q in _pell_pairs(m, first, 60):
            for u in (_q(p, -q, m), _q(-p, q, m), _q(Fraction(p, 3), Fraction(-q, 3), m)):
                expected = _reference_sign(u)
                assert expected != 0
                assert q_sign(u) == expected, (p, q)


def test_floor_examples() -> None:
    assert q_floor(_q(2, 2)) == 4
    assert q_floor(_q(1, 1)) == 2
    assert q_floor(_q(0, -1)) == -2
    assert q_floor(_q(Fraction(7, 2), 0)) == 3


@pytest.mark.parametrize("m", [2, 3, 5, 11])
def test_floor_brackets_the_value(m: int) -> None:
    for u in _random_quads(200, m, seed=10 + m):
        k = q_floor(u)
        assert q_sign(u - k) >= 0
        assert q_sign(u - (k + 1)) < 0


def test_ordering_and_hashing() -> None:
    root = QuadNumber.sqrt(2)
    assert 1 < root < 2
    assert sorted([_q(2, 0), root, _q(1, 0)]) == [_q(1, 0), root, _q(2, 0)]
    assert _q(3, 0) == 3
    assert hash(_q(Fraction(1, 2), 0)) == hash(Fraction(1, 2))
    assert len({_q(1, 1), _q(1, 1), _q(1, -1)}) == 2


def test_float_avoids_cancellation() -> None:
    assert float(_q(2, -1)) == pytest.approx(0.5857864376269049, rel=1e-15)
    # 99 - 70*sqrt(2) loses most of its digits when evaluated naively
    small = _q(99, -70)
    assert float(small) == pytest.approx(1 / (99 + 70 * 2**0.5), rel=1e-15)


def test_conjugate_and_norm() -> None:
    u = _q(3, 2)
    assert u.conjugate() == _q(3, -2)
    assert u.norm() == 1
    assert u * u.conjugate() == 1


def test_format_and_parse() -> None:
    theta = _q(0, Fraction(1, 2))
    assert format_quad(theta) == "0+1/2√2"
    assert parse_quad("0+1/2√2") == theta
    assert parse_quad("2 - 1√2") == _q(2, -1)
    assert parse_quad("2-1*sqrt(2)") == _q(2, -1)
    assert parse_quad("2*sqrt(3)") == QuadNumber(Fraction(0), Fraction(2), 3)
    assert parse_quad(format_quad(_q(Fraction(-5, 3), Fraction(7, 4)))) == _q(
        Fraction(-5, 3), Fraction(7, 4)
    )
    with pytest.raises(ParameterError):
        parse_quad("1/2")


def test_parse_point_kinds() -> None:
    assert parse_point("1/2") == Fraction(1, 2)
    assert parse_point("3") == Fraction(3)
    assert parse_point("0+1/2√2") == _q(0, Fraction(1, 2))
    assert parse_point("0.25") == 0.25
    assert isinstance(parse_point("0.25"), float)
    with pytest.raises(ParameterError):
        parse_point("half")


def test_exact_decimals() -> None:
    assert to_decimal(QuadNumber.sqrt(2), 5) == "1.41421"
    assert to_decimal(_q(0, -1), 3) == "-1.415"
    assert to_decimal(_q(2, 2), 0) == "4"
    with pytest.raises(ParameterError):
        to_decimal(QuadNumber.sqrt(2), -1)
