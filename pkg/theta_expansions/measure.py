"""Closed forms for the invariant measure of the theta-Gauss map.

The measure has density ``C*theta/(1 + theta*x)`` on ``[0, theta]`` with
``C = 1/log(1 + 1/m)``. Everything here is evaluated with ``log1p``/``expm1``
so that tails stay accurate for very large digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from theta_expansions.errors import DomainError, ParameterError
from theta_expansions.models import Point, ThetaParams

MomentOrder = Literal[1, 2]

# relative slack for points that round just past theta
_EDGE_SLACK = 8 * np.finfo(float).eps
_BRANCH_CUTOFF = 1e-15
_MAX_BRANCHES = 500_000


@dataclass(frozen=True)
class MeasureContext:
    params: ThetaParams
    C: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "C", 1.0 / self.params.log1p_theta2)

    @classmethod
    def for_m(cls, m: int) -> MeasureContext:
        return cls(ThetaParams(m))

    @property
    def m(self) -> int:
        return self.params.m

    @property
    def theta(self) -> float:
        return self.params.theta


def _clip_point(x: Point | float, ctx: MeasureContext, *, name: str = "x") -> float:
    value = float(x)
    theta = ctx.theta
    if not (0.0 <= value <= theta * (1.0 + _EDGE_SLACK)):
        raise DomainError(
            f"{name} = {value} is outside [0, θ] for m = {ctx.m}", m=ctx.m, **{name: value}
        )
    return min(value, theta)


def _check_digit(i: int, ctx: MeasureContext, *, name: str = "i") -> None:
    if i < ctx.m:
        raise DomainError(
            f"digit {name} = {i} is below m = {ctx.m}", m=ctx.m, **{name: i}
        )


def density(x: Point | float, ctx: MeasureContext) -> float:
    value = _clip_point(x, ctx)
    return ctx.C * ctx.theta / (1.0 + ctx.theta * value)


def density_array(x: np.ndarray, ctx: MeasureContext) -> np.ndarray:
    """Vectorised :func:`density` without domain checks."""
    return ctx.C * ctx.theta / (1.0 + ctx.theta * np.asarray(x, dtype=float))


def density_bounds(ctx: MeasureContext) -> tuple[float, float]:
    upper = ctx.C * ctx.theta
    return upper / (1.0 + ctx.theta**2), upper


def measure_interval(a: Point | float, b: Point | float, ctx: MeasureContext) -> float:
    lo = _clip_point(a, ctx, name="a")
    hi = _clip_point(b, ctx, name="b")
    if lo > hi:
        raise DomainError(f"interval endpoints out of order: {lo} > {hi}", a=lo, b=hi)
    theta = ctx.theta
    return ctx.C * math.log1p(theta * (hi - lo) / (1.0 + theta * lo))


def cdf(x: Point | float, ctx: MeasureContext) -> float:
    return measure_interval(0.0, x, ctx)


def digit_mass(i: int, ctx: MeasureContext) -> float:
    _check_digit(i, ctx)
    return math.log1p(1.0 / (i * (i + 2))) / ctx.params.log1p_theta2


def digit_masses(upto: int, ctx: MeasureContext) -> np.ndarray:
    """Masses of the digits ``m..upto`` as an array."""
    _check_digit(upto, ctx, name="upto")
    i = np.arange(ctx.m, upto + 1, dtype=float)
    return np.log1p(1.0 / (i * (i + 2.0))) / ctx.params.log1p_theta2


def tail_mass(k: int, ctx: MeasureContext) -> float:
    _check_digit(k, ctx, name="k")
    if k == ctx.m:
        return 1.0
    return math.log1p(1.0 / k) / ctx.params.log1p_theta2


def truncated_moment(N: int, order: MomentOrder, ctx: MeasureContext) -> float:
    _check_digit(N, ctx, name="N")
    if order not in (1, 2):
        raise ParameterError(f"moment order must be 1 or 2, got {order}", order=order)
    i = np.arange(ctx.m, N + 1, dtype=float)
    masses = np.log1p(1.0 / (i * (i + 2.0)))
    return float(np.sum(i**order * masses) / ctx.params.log1p_theta2)


def quantile(u: float, ctx: MeasureContext) -> float:
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"probability {u} is outside [0, 1]", u=u)
    if u == 1.0:
        return ctx.theta
    return min(math.expm1(u * ctx.params.log1p_theta2) / ctx.theta, ctx.theta)


def mean(ctx: MeasureContext) -> float:
    theta = ctx.theta
    return ctx.C * (theta - ctx.params.log1p_theta2 / theta)


def khinchine_constant(ctx: MeasureContext) -> float:
    return ctx.C


def preimage_mass(
    a: Point | float,
    b: Point | float,
    ctx: MeasureContext,
    *,
    cutoff: float = _BRANCH_CUTOFF,
    max_terms: int = _MAX_BRANCHES,
) -> float:
    """Mass of the full preimage of ``(a, b]`` summed over inverse branches.

    Branches are summed until a term drops below ``cutoff`` or ``max_terms``
    branches have been used; the remaining terms decay like ``1/i**2`` and are
    added as an integral estimate.
    """
    lo = _clip_point(a, ctx, name="a")
    hi = _clip_point(b, ctx, name="b")
    if lo > hi:
        raise DomainError(f"interval endpoints out of order: {lo} > {hi}", a=lo, b=hi)
    if lo == hi:
        return 0.0
    theta = ctx.theta
    i = np.arange(ctx.m, ctx.m + max_terms, dtype=float)
    shift_lo = lo + i * theta
    shift_hi = hi + i * theta
    # w_i(lo) - w_i(hi), free of cancellation
    width = (hi - lo) / (shift_lo * shift_hi)
    terms = ctx.C * np.log1p(theta * width / (1.0 + theta / shift_hi))
    small = np.flatnonzero(terms < cutoff)
    used = int(small[0]) + 1 if small.size else terms.size
    total = math.fsum(terms[:used])
    last_index = float(i[used - 1])
    tail = float(terms[used - 1]) * last_index**2 / (last_index + 0.5)
    return total + tail
