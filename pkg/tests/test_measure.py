import math

import numpy as np
import pytest
from scipy import integrate

from theta_expansions.errors import DomainError, ParameterError
from theta_expansions.measure import (
    MeasureContext,
    cdf,
    density,
    density_array,
    density_bounds,
    digit_mass,
    digit_masses,
    khinchine_constant,
    mean,
    measure_interval,
    preimage_mass,
    quantile,
    tail_mass,
    truncated_moment,
)

CTX = MeasureContext.for_m(2)


def _quad(f, a: float, b: float) -> float:
    value, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
    return value


def test_constants() -> None:
    assert khinchine_constant(CTX) == pytest.approx(1 / math.log(1.5), rel=1e-12)
    assert khinchine_constant(MeasureContext.for_m(3)) == pytest.approx(
        1 / math.log(4 / 3), rel=1e-12
    )
    assert CTX.m == 2
    assert CTX.theta == pytest.approx(2**-0.5)


def test_density_examples() -> None:
    assert density(0.0, CTX) == pytest.approx(CTX.C * CTX.theta, rel=1e-12)
    assert density(CTX.theta, CTX) == pytest.approx(CTX.C * CTX.theta / 1.5, rel=1e-12)


def test_density_outside_domain() -> None:
    with pytest.raises(DomainError):
        density(0.8, CTX)
    with pytest.raises(DomainError):
        density(-0.01, CTX)


def test_density_array_matches_scalar() -> None:
    grid = np.linspace(0.0, CTX.theta, 11)

    assert density_array(grid, CTX) == pytest.approx(np.array([density(x, CTX) for x in grid]))


@pytest.mark.parametrize("m", [2, 3, 5])
def test_density_bounds_hold(m: int) -> None:
    ctx = MeasureContext.for_m(m)
    lower, upper = density_bounds(ctx)
    values = density_array(np.linspace(0.0, ctx.theta, 1001), ctx)

    assert lower > 0.0
    assert values.min() >= lower * (1 - 1e-12)
    assert values.max() <= upper * (1 + 1e-12)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_total_mass_is_one(m: int) -> None:
    ctx = MeasureContext.for_m(m)

    assert measure_interval(0.0, ctx.theta, ctx) == pytest.approx(1.0, abs=1e-14)
    assert _quad(lambda x: density(x, ctx), 0.0, ctx.theta) == pytest.approx(1.0, abs=1e-12)


def test_measure_interval_example() -> None:
    assert measure_interval(0.0, CTX.theta / 2, CTX) == pytest.approx(
        CTX.C * math.log(1.25), rel=1e-12
    )
    assert measure_interval(0.0, CTX.theta / 2, CTX) == pytest.approx(tail_mass(4, CTX))


def test_measure_interval_validation() -> None:
    with pytest.raises(DomainError):
        measure_interval(0.5, 0.2, CTX)
    with pytest.raises(DomainError):
        measure_interval(0.0, 1.0, CTX)
    assert measure_interval(0.3, 0.3, CTX) == 0.0


def test_cdf_matches_quadrature() -> None:
    for x in (0.05, 0.2, 0.5, CTX.theta):
        assert cdf(x, CTX) == pytest.approx(
            _quad(lambda t: density(t, CTX), 0.0, x), abs=1e-12
        )


def test_digit_mass_examples() -> None:
    assert digit_mass(2, CTX) == pytest.approx(CTX.C * math.log(9 / 8), rel=1e-12)
    assert digit_mass(3, CTX) == pytest.approx(CTX.C * math.log(16 / 15), rel=1e-12)
    with pytest.raises(DomainError):
        digit_mass(1, CTX)


def test_digit_masses_array() -> None:
    masses = digit_masses(10, CTX)

    assert len(masses) == 9
    assert masses[0] == pytest.approx(digit_mass(2, CTX))
    assert masses.sum() + tail_mass(11, CTX) == pytest.approx(1.0, abs=1e-13)


def test_tail_mass_examples() -> None:
    assert tail_mass(2, CTX) == 1.0
    assert tail_mass(3, CTX) == pytest.approx(CTX.C * math.log(4 / 3), rel=1e-12)
    assert tail_mass(10**6, CTX) == pytest.approx(CTX.C * 1e-6, rel=1e-6)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_tail_law(m: int) -> None:
    ctx = MeasureContext.for_m(m)

    assert tail_mass(m, ctx) == 1.0
    for k in range(m + 1, 1001):
        assert tail_mass(k, ctx) == pytest.approx(ctx.C * math.log(1 + 1 / k), rel=1e-12)
    for k in (m, m + 1, 10, 57, 1000):
        # {digit >= k} is the interval (0, 1/(k theta)]
        expected = _quad(lambda x: density(x, ctx), 0.0, 1.0 / (k * ctx.theta))
        assert tail_mass(k, ctx) == pytest.approx(expected, abs=1e-10)


def test_digit_mass_is_cylinder_mass() -> None:
    for i in (2, 3, 7, 40):
        lo = 1.0 / ((i + 1) * CTX.theta)
        hi = 1.0 / (i * CTX.theta)
        assert digit_mass(i, CTX) == pytest.approx(measure_interval(lo, hi, CTX), rel=1e-12)


def test_truncated_moment_examples() -> None:
    assert truncated_moment(2, 1, CTX) == pytest.approx(2 * digit_mass(2, CTX), rel=1e-13)
    assert truncated_moment(3, 1, CTX) == pytest.approx(
        2 * digit_mass(2, CTX) + 3 * digit_mass(3, CTX), rel=1e-13
    )
    large = truncated_moment(10**4, 1, CTX)
    assert abs(large - CTX.C * math.log(10**4)) / (CTX.C * math.log(10**4)) < 0.15


def test_second_moment_grows_linearly() -> None:
    second = truncated_moment(10**4, 2, CTX)

    assert second == pytest.approx(CTX.C * 10**4, rel=0.01)
    with pytest.raises(ParameterError):
        truncated_moment(10, 3, CTX)  # type: ignore[arg-type]


def test_quantile_examples() -> None:
    assert quantile(0.5, CTX) == pytest.approx((math.sqrt(1.5) - 1) / CTX.theta, rel=1e-13)
    assert quantile(0.0, CTX) == 0.0
    assert quantile(1.0, CTX) == CTX.theta
    with pytest.raises(DomainError):
        quantile(1.5, CTX)


@pytest.mark.parametrize("u", [1e-12, 0.01, 0.3, 0.5, 0.9, 0.999999])
def test_quantile_inverts_cdf(u: float) -> None:
    assert cdf(quantile(u, CTX), CTX) == pytest.approx(u, rel=1e-12)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_mean_matches_quadrature(m: int) -> None:
    ctx = MeasureContext.for_m(m)

    assert mean(ctx) == pytest.approx(
        _quad(lambda x: x * density(x, ctx), 0.0, ctx.theta), abs=1e-12
    )


@pytest.mark.parametrize("m", [2, 3, 5])
def test_preimage_mass_is_invariant(m: int) -> None:
    ctx = MeasureContext.for_m(m)
    rng = np.random.default_rng(m)
    for a, b in np.sort(rng.uniform(0.0, ctx.theta, size=(20, 2)), axis=1).tolist():
        assert abs(preimage_mass(a, b, ctx) - measure_interval(a, b, ctx)) < 1e-9


def test_preimage_mass_of_whole_interval() -> None:
    assert preimage_mass(0.0, CTX.theta, CTX) == pytest.approx(1.0, abs=1e-9)
    assert preimage_mass(0.2, 0.2, CTX) == 0.0
