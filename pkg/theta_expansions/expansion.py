from __future__ import annotations

import logging
import math
import threading
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from fractions import Fraction
from typing import Any

from mpmath import iv
from scipy import integrate

from theta_expansions.errors import (
    CertificationError,
    DigitOverflowError,
    DomainError,
    OrbitTooShortError,
    ParameterError,
)
from theta_expansions.measure import MeasureContext
from theta_expansions.models import (
    ExactPoint,
    Expansion,
    Interval,
    Mode,
    Point,
    ThetaParams,
)
from theta_expansions.qfield import QuadNumber, q_floor, q_inv, q_sign

logger = logging.getLogger(__name__)

DEFAULT_PRECISION = 64
MAX_PRECISION = 4096
_DIGIT_LIMIT = 2**63

# mpmath's interval context keeps its precision globally
_IV_LOCK = threading.Lock()


class _AmbiguousFloor(Exception):
    def __init__(self, step: int, candidates: list[int]) -> None:
        super().__init__(step, candidates)
        self.step = step
        self.candidates = candidates


def to_exact(x: ExactPoint | float, params: ThetaParams) -> QuadNumber:
    if isinstance(x, QuadNumber):
        if x.m != params.m:
            raise ParameterError(
                f"point lies in Q(√{x.m}) but m = {params.m}", m=params.m, point_m=x.m
            )
        return x
    if isinstance(x, bool):
        raise DomainError(f"not a point: {x!r}")
    if isinstance(x, (int, Fraction, float)):
        return QuadNumber.rational(Fraction(x), params.m)
    raise DomainError(f"cannot represent {x!r} exactly in Q(√{params.m})")


def _is_interval(x: Any) -> bool:
    return hasattr(x, "_mpi_")


def _check_point(x: Any, params: ThetaParams) -> None:
    if _is_interval(x):
        return
    if isinstance(x, float):
        inside = x > 0.0 and (
            x <= params.theta or Fraction(x) ** 2 * params.m <= 1
        )
    else:
        exact = to_exact(x, params)
        inside = q_sign(exact) > 0 and q_sign(params.theta_exact - exact) >= 0
    if not inside:
        raise DomainError(
            f"point {x} is outside (0, θ] for m = {params.m}", m=params.m, x=str(x)
        )


def _exact_step(x: QuadNumber, params: ThetaParams) -> tuple[int, QuadNumber]:
    y = params.inv_theta_exact * q_inv(x)
    digit = q_floor(y)
    return digit, (y - digit) * params.theta_exact


def _double_step(x: float, params: ThetaParams) -> tuple[int, float]:
    y = params.inv_theta / x
    digit = int(y)
    if digit < params.m:
        # x rounded onto theta from above
        digit = params.m
    if digit >= _DIGIT_LIMIT:
        raise DigitOverflowError(f"digit {digit} does not fit in 64 bits", x=x)
    frac = y - digit
    return digit, params.theta * frac if frac > 0.0 else 0.0


@contextmanager
def _interval_context(bits: int) -> Iterator[Any]:
    with _IV_LOCK:
        saved = iv.prec
        iv.prec = bits
        try:
            yield iv
        finally:
            iv.prec = saved


def _enclose(ctx: Any, x: Any, params: ThetaParams) -> Any:
    if _is_interval(x):
        return x
    if isinstance(x, float):
        return ctx.mpf(x)
    exact = to_exact(x, params)
    a = ctx.mpf(exact.a.numerator) / exact.a.denominator
    b = ctx.mpf(exact.b.numerator) / exact.b.denominator
    return a + b * ctx.sqrt(params.m)


def _interval_orbit(
    x: Any, n: int, params: ThetaParams, bits: int
) -> tuple[list[int], list[Any], bool]:
    with _interval_context(bits) as ctx:
        root = ctx.sqrt(params.m)
        point = _enclose(ctx, x, params)
        digits: list[int] = []
        orbit: list[Any] = [point]
        for step in range(1, n + 1):
            if not float(point.a) > 0.0:
                raise _AmbiguousFloor(step, [])
            y = root / point
            lower, upper = int(y.a), int(y.b)
            if lower != upper:
                raise _AmbiguousFloor(step, list(range(lower, upper + 1)))
            digits.append(lower)
            point = (y - lower) / root
            orbit.append(point)
        return digits, orbit, False


def _certified_orbit(
    x: Any, n: int, params: ThetaParams, precision: int, max_precision: int
) -> tuple[list[int], list[Any], int]:
    bits = precision
    if _is_interval(x):
        # a bare enclosure cannot be refined
        max_precision = precision
    while True:
        try:
            digits, orbit, _ = _interval_orbit(x, n, params, bits)
            return digits, orbit, bits
        except _AmbiguousFloor as ambiguity:
            if bits >= max_precision:
                raise CertificationError(
                    f"digit {ambiguity.step} not certified at {bits} bits",
                    ambiguous=ambiguity.candidates,
                    precision=bits,
                ) from None
            logger.debug(
                "ambiguous floor at step %d with %d bits, escalating",
                ambiguity.step,
                bits,
            )
            bits = min(2 * bits, max_precision)


def gauss_step(
    x: Any,
    params: ThetaParams,
    mode: Mode = "exact",
    *,
    precision: int = DEFAULT_PRECISION,
    max_precision: int = MAX_PRECISION,
) -> tuple[int, Any]:
    _check_point(x, params)
    if mode == "exact":
        return _exact_step(to_exact(x, params), params)
    if mode == "double":
        return _double_step(float(x), params)
    if mode == "interval":
        digits, orbit, _ = _certified_orbit(x, 1, params, precision, max_precision)
        return digits[0], orbit[1]
    raise ParameterError(f"unknown mode {mode!r}", mode=str(mode))


def expand(
    x: Any,
    n: int,
    params: ThetaParams,
    mode: Mode = "exact",
    *,
    precision: int = DEFAULT_PRECISION,
    max_precision: int = MAX_PRECISION,
) -> Expansion:
    if n < 1:
        raise DomainError(f"expansion length must be >= 1, got {n}", n=n)
    _check_point(x, params)

    if mode == "interval":
        digits, orbit, bits = _certified_orbit(x, n, params, precision, max_precision)
        return Expansion(
            m=params.m,
            mode=mode,
            digits=tuple(digits),
            orbit=tuple(orbit),
            terminated=False,
            precision=bits,
        )

    point: Any
    if mode == "exact":
        point = to_exact(x, params)
    elif mode == "double":
        point = float(x)
    else:
        raise ParameterError(f"unknown mode {mode!r}", mode=str(mode))

    digits_out: list[int] = []
    orbit_out: list[Any] = [point]
    terminated = False
    for _ in range(n):
        if mode == "exact":
            digit, point = _exact_step(point, params)
        else:
            digit, point = _double_step(point, params)
        digits_out.append(digit)
        orbit_out.append(point)
        if not point:
            terminated = True
            break
    return Expansion(
        m=params.m,
        mode=mode,
        digits=tuple(digits_out),
        orbit=tuple(orbit_out),
        terminated=terminated,
    )


def _check_digits(digits: Sequence[int], params: ThetaParams) -> None:
    for digit in digits:
        if digit < params.m:
            raise DomainError(
                f"digit {digit} is below m = {params.m}", m=params.m, digit=digit
            )


def branch_inverse(i: int, y: Point, params: ThetaParams) -> Point:
    """The inverse branch w_i(y) = 1/(y + i*theta)."""
    if isinstance(y, float):
        return 1.0 / (y + i * params.theta)
    return q_inv(to_exact(y, params) + params.theta_exact * i)


def evaluate(
    digits: Sequence[int],
    params: ThetaParams,
    tail: Point | None = None,
    *,
    exact: bool = False,
) -> Point:
    _check_digits(digits, params)
    if tail is not None and tail != 0:
        _check_point(tail, params)
    use_exact = exact or isinstance(tail, (QuadNumber, Fraction))
    if use_exact:
        value: Point = to_exact(tail if tail is not None else 0, params)
    else:
        value = float(tail) if tail is not None else 0.0
    for digit in reversed(digits):
        value = branch_inverse(digit, value, params)
    return value


def convergents(
    digits: Sequence[int], params: ThetaParams, *, exact: bool = False
) -> list[tuple[Point, Point]]:
    _check_digits(digits, params)
    one: Point = QuadNumber.rational(1, params.m) if exact else 1.0
    zero: Point = QuadNumber.rational(0, params.m) if exact else 0.0
    theta: Point = params.theta_exact if exact else params.theta
    p_prev, p = one, zero
    q_prev, q = zero, one
    out: list[tuple[Point, Point]] = []
    for digit in digits:
        coefficient = theta * digit  # type: ignore[operator]
        p_prev, p = p, coefficient * p + p_prev
        q_prev, q = q, coefficient * q + q_prev
        out.append((p, q))
    return out


def cylinder(i: int, params: ThetaParams) -> Interval:
    if i < params.m:
        raise DomainError(f"digit {i} is below m = {params.m}", m=params.m, digit=i)
    return Interval(
        lo=QuadNumber(Fraction(0), Fraction(1, i + 1), params.m),
        hi=QuadNumber(Fraction(0), Fraction(1, i), params.m),
        lo_open=True,
        hi_open=False,
    )


def _starts_with(x: QuadNumber, digits: tuple[int, ...], params: ThetaParams) -> bool:
    return expand(x, len(digits), params, "exact").digits == digits


def cylinder_rank_n(digits: Sequence[int], params: ThetaParams) -> Interval:
    if not digits:
        raise DomainError("a cylinder needs at least one digit")
    _check_digits(digits, params)
    from_zero: Point = QuadNumber.rational(0, params.m)
    from_theta: Point = params.theta_exact
    for digit in reversed(digits):
        from_zero = branch_inverse(digit, from_zero, params)
        from_theta = branch_inverse(digit, from_theta, params)
    assert isinstance(from_zero, QuadNumber) and isinstance(from_theta, QuadNumber)
    lo, hi = sorted((from_zero, from_theta))
    key = tuple(digits)
    return Interval(
        lo=lo,
        hi=hi,
        lo_open=not _starts_with(lo, key, params),
        hi_open=not _starts_with(hi, key, params),
    )


def _as_float(point: Any) -> float:
    if _is_interval(point):
        return float(point.mid)
    return float(point)


def orbit_log_derivative(
    x: Any, n: int, params: ThetaParams, mode: Mode = "double"
) -> float:
    """log|(T^n)'(x)| = -2 * sum of log T^j(x) over j < n."""
    expansion = expand(x, n, params, mode)
    if len(expansion.digits) < n:
        raise OrbitTooShortError(
            f"orbit terminated after {len(expansion.digits)} of {n} steps",
            length=len(expansion.digits),
        )
    return -2.0 * math.fsum(math.log(_as_float(p)) for p in expansion.orbit[:n])


def distortion_ratio(
    digits: Sequence[int], x: Point, y: Point, params: ThetaParams
) -> tuple[float, float]:
    window = cylinder_rank_n(digits, params)
    for point in (x, y):
        if not window.contains(point):
            raise DomainError(
                f"point {point} is outside the cylinder {list(digits)}",
                x=str(point),
            )
    if x == y:
        return 0.0, 0.0
    exact = not isinstance(x, float) and not isinstance(y, float)
    mode: Mode = "exact" if exact else "double"
    n = len(digits)
    image_x = expand(x, n, params, mode).orbit[n]
    image_y = expand(y, n, params, mode).orbit[n]
    delta = orbit_log_derivative(x, n, params, mode) - orbit_log_derivative(
        y, n, params, mode
    )
    return abs(math.expm1(delta)), abs(_as_float(image_x) - _as_float(image_y))


def detect_period(
    x: ExactPoint, cap: int, params: ThetaParams
) -> tuple[int, int] | None:
    if cap <= 0:
        return None
    _check_point(x, params)
    point = to_exact(x, params)
    seen: dict[QuadNumber, int] = {point: 0}
    for step in range(1, cap + 1):
        _, point = _exact_step(point, params)
        if not point:
            return step, 0
        first = seen.get(point)
        if first is not None:
            return first, step - first
        seen[point] = step
    return None


def float_start(x: ExactPoint | float, params: ThetaParams) -> float:
    """Nearest double to ``x`` that still lies in (0, theta]."""
    start = float(x)
    while start > params.theta and Fraction(start) ** 2 * params.m > 1:
        start = math.nextafter(start, 0.0)
    return start


def mode_agreement(x: ExactPoint, n: int, params: ThetaParams) -> int | None:
    """First 1-based index where exact and double digits differ, if any."""
    exact = expand(x, n, params, "exact")
    double = expand(float_start(x, params), n, params, "double")
    for index, (a, b) in enumerate(zip(exact.digits, double.digits), start=1):
        if a != b:
            return index
    return None


def lyapunov_exponent(ctx: MeasureContext) -> float:
    """Mean of ``-2 log x`` under the invariant measure.

    This is the average exponential rate at which nearby orbits separate, so a
    double-precision orbit keeps roughly ``52 log 2 / lyapunov_exponent``
    trustworthy digits.
    """
    value, _ = integrate.quad(
        lambda x: -2.0 * math.log(x) * ctx.C * ctx.theta / (1.0 + ctx.theta * x),
        0.0,
        ctx.theta,
        limit=200,
    )
    return float(value)
