"""Transfer operator numerics for the theta-Gauss map.

The operator acts as ``(Lf)(x) = sum_i f(w_i(x)) / (x + i*theta)**2`` with the
inverse branches ``w_i(x) = 1/(x + i*theta)``. Besides the pointwise operator
this module builds its Ulam discretisation on a uniform grid and reads the
stationary density, the subdominant eigenvalue and digit correlations off the
resulting stochastic matrix.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from theta_expansions.errors import (
    DomainError,
    FitError,
    NumericalError,
    UnsupportedMethodError,
)
from theta_expansions.measure import (
    MeasureContext,
    density_array,
    digit_masses,
    measure_interval,
    preimage_mass,
)
from theta_expansions.models import MixingEstimate, MixingMethod, PsiFit, UlamOperator

logger = logging.getLogger(__name__)

DEFAULT_CELLS = 1024
DEFAULT_DIGIT_CAP = 50
DEFAULT_NOISE_FLOOR = 1e-12
STATIONARY_TOL = 1e-12

Observable = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class InvariantDensity:
    """The invariant density as a vectorised observable."""

    ctx: MeasureContext

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return density_array(x, self.ctx)


@dataclass(frozen=True)
class CovarianceRow:
    lag: int
    covariance: float
    bound: float
    psi_hat: float
    mean_bound: float

    @property
    def ok(self) -> bool:
        return abs(self.covariance) <= self.bound


def _check_cutoff(cutoff: int, ctx: MeasureContext) -> None:
    if cutoff < ctx.m:
        raise DomainError(
            f"branch cutoff {cutoff} is below m = {ctx.m}", m=ctx.m, cutoff=cutoff
        )


def _tail_sum(x: float, cutoff: int, ctx: MeasureContext) -> float:
    """sum over i > cutoff of (x + i*theta)**-2."""
    theta = ctx.theta
    return float(special.polygamma(1, cutoff + 1 + x / theta)) / theta**2


def _evaluate(f: Observable, points: np.ndarray) -> np.ndarray:
    values = np.asarray(f(points), dtype=float)
    return np.broadcast_to(values, points.shape)


def transfer_apply(f: Observable, x: float, cutoff: int, ctx: MeasureContext) -> float:
    _check_cutoff(cutoff, ctx)
    if not 0.0 <= x <= ctx.theta * (1.0 + 1e-12):
        raise DomainError(f"x = {x} is outside [0, θ]", x=x)
    theta = ctx.theta
    shifted = x + np.arange(ctx.m, cutoff + 1, dtype=float) * theta
    partial = math.fsum(_evaluate(f, 1.0 / shifted) / shifted**2)
    if isinstance(f, InvariantDensity) and f.ctx.m == ctx.m:
        # telescoping: C/(x + i*theta) - C/(x + (i+1)*theta) per branch
        tail = ctx.C / (x + (cutoff + 1) * theta)
    else:
        # branch images accumulate at 0
        tail = float(_evaluate(f, np.zeros(1))[0]) * _tail_sum(x, cutoff, ctx)
    return partial + tail


def transfer_tail_bound(sup_f: float, x: float, cutoff: int, ctx: MeasureContext) -> float:
    _check_cutoff(cutoff, ctx)
    return abs(sup_f) * _tail_sum(x, cutoff, ctx)


def build_ulam(cells: int, ctx: MeasureContext) -> UlamOperator:
    """Ulam matrix ``P[r, c] = |cell_r ∩ T^-1 cell_c| / |cell_r|``.

    Each branch maps the grid monotonically, so the preimage of a cell inside
    one cylinder is the interval between two branch images of grid points.
    Branches ``k >= cells*m`` land entirely in the first cell; their combined
    contribution telescopes into a digamma difference.
    """
    if cells < 2:
        raise DomainError(f"an Ulam grid needs at least 2 cells, got {cells}", cells=cells)
    theta = ctx.theta
    width = theta / cells
    grid = np.linspace(0.0, theta, cells + 1)
    lower = grid[:-1]
    cutoff = cells * ctx.m
    masses = np.zeros((cells, cells))

    for k in range(ctx.m, cutoff):
        images = 1.0 / (grid + k * theta)
        first = int(images[-1] // width)
        last = min(int(math.ceil(images[0] / width)), cells)
        rows = lower[first:last, np.newaxis]
        upper_part = np.clip(images[np.newaxis, :-1] - rows, 0.0, width)
        lower_part = np.clip(images[np.newaxis, 1:] - rows, 0.0, width)
        masses[first:last] += upper_part - lower_part

    scaled = grid / theta
    masses[0] += (
        special.digamma(cutoff + scaled[1:]) - special.digamma(cutoff + scaled[:-1])
    ) / theta

    matrix = masses / width
    residual = 1.0 - matrix.sum(axis=1)
    matrix[:, 0] += residual
    np.clip(matrix, 0.0, None, out=matrix)
    logger.debug(
        "Ulam matrix with %d cells, %d explicit branches, max row residual %.3g",
        cells,
        cutoff - ctx.m,
        float(np.abs(residual).max()),
    )
    return UlamOperator(m=ctx.m, cells=cells, matrix=matrix, branch_cutoff=cutoff)


@lru_cache(maxsize=4)
def _cached_ulam(cells: int, m: int) -> UlamOperator:
    return build_ulam(cells, MeasureContext.for_m(m))


def _operator_for(op: UlamOperator | None, ctx: MeasureContext) -> UlamOperator:
    if op is None:
        return _cached_ulam(DEFAULT_CELLS, ctx.m)
    if op.m != ctx.m:
        raise DomainError(f"Ulam matrix built for m = {op.m}, not {ctx.m}", m=ctx.m)
    return op


def stationary_vector(
    op: UlamOperator, *, max_iter: int = 100_000, tol: float = STATIONARY_TOL
) -> np.ndarray:
    """Left fixed probability vector of the Ulam matrix."""
    pi = np.full(op.cells, 1.0 / op.cells)
    for iteration in range(1, max_iter + 1):
        updated = pi @ op.matrix
        updated /= updated.sum()
        change = float(np.abs(updated - pi).sum())
        pi = updated
        if change < tol:
            logger.debug("stationary vector converged after %d iterations", iteration)
            return pi
    raise NumericalError(
        f"power iteration did not converge in {max_iter} iterations",
        iterations=max_iter,
        last_change=change,
    )


def stationary_density(
    op: UlamOperator,
    ctx: MeasureContext,
    *,
    max_iter: int = 100_000,
    tol: float = STATIONARY_TOL,
) -> np.ndarray:
    if op.m != ctx.m:
        raise DomainError(f"Ulam matrix built for m = {op.m}, not {ctx.m}", m=ctx.m)
    return stationary_vector(op, max_iter=max_iter, tol=tol) / op.width


def exact_cell_masses(op: UlamOperator, ctx: MeasureContext) -> np.ndarray:
    grid = op.grid
    theta = ctx.theta
    return ctx.C * np.log1p(theta * np.diff(grid) / (1.0 + theta * grid[:-1]))


def density_l1_error(density: np.ndarray, op: UlamOperator, ctx: MeasureContext) -> float:
    """L1 distance between a cellwise density and the exact one's cell averages."""
    averages = exact_cell_masses(op, ctx) / op.width
    return float(np.abs(density - averages).sum() * op.width)


def _cylinder_overlap(op: UlamOperator, digit_cap: int, ctx: MeasureContext) -> np.ndarray:
    """``F[c, j]``: fraction of cell ``c`` covered by the cylinder of digit ``m + j``."""
    theta = ctx.theta
    digits = np.arange(ctx.m, digit_cap + 1, dtype=float)
    hi = 1.0 / (digits * theta)
    lo = 1.0 / ((digits + 1.0) * theta)
    grid = op.grid
    left = grid[:-1, np.newaxis]
    right = grid[1:, np.newaxis]
    overlap = np.minimum(right, hi) - np.maximum(left, lo)
    return np.clip(overlap, 0.0, None) / op.width


def induced_digit_masses(
    density: np.ndarray, op: UlamOperator, upto: int, ctx: MeasureContext
) -> np.ndarray:
    """Digit masses ``m..upto`` implied by a cellwise density."""
    if upto < ctx.m:
        raise DomainError(f"digit {upto} is below m = {ctx.m}", m=ctx.m, upto=upto)
    return (density * op.width) @ _cylinder_overlap(op, upto, ctx)


def _pushed_cylinders(op: UlamOperator, digit_cap: int, ctx: MeasureContext) -> np.ndarray:
    """Row ``i``: cell distribution of ``T x`` over the event ``digit_1 = m + i``."""
    theta = ctx.theta
    grid = op.grid
    digits = np.arange(ctx.m, digit_cap + 1, dtype=float)[:, np.newaxis]
    shifted = grid[np.newaxis, :] + digits * theta
    images = 1.0 / shifted
    span = images[:, :-1] - images[:, 1:]
    return ctx.C * np.log1p(theta * span / (1.0 + theta * images[:, 1:]))


def _lag_one_joint(digit_cap: int, ctx: MeasureContext) -> np.ndarray:
    theta = ctx.theta
    digits = np.arange(ctx.m, digit_cap + 1, dtype=float)
    # rank-2 cylinder [i, j] runs between w_i(w_j(0)) and w_i(w_j(theta))
    inner_a = 1.0 / (digits * theta)
    inner_b = 1.0 / ((digits + 1.0) * theta)
    outer = digits[:, np.newaxis] * theta
    end_a = 1.0 / (outer + inner_a[np.newaxis, :])
    end_b = 1.0 / (outer + inner_b[np.newaxis, :])
    lo = np.minimum(end_a, end_b)
    hi = np.maximum(end_a, end_b)
    return ctx.C * np.log1p(theta * (hi - lo) / (1.0 + theta * lo))


def _joint_curve(
    lags: Sequence[int],
    digit_cap: int,
    ctx: MeasureContext,
    op: UlamOperator | None,
    method: MixingMethod,
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(lag, joint, column_marginal)`` for increasing lags."""
    exact_marginal = digit_masses(digit_cap, ctx)
    pushed: np.ndarray | None = None
    marginal_cells: np.ndarray | None = None
    current = 1
    for lag in sorted(set(lags)):
        if lag < 1:
            raise DomainError(f"lag must be >= 1, got {lag}", lag=lag)
        if lag == 1:
            yield lag, _lag_one_joint(digit_cap, ctx), exact_marginal
            continue
        if method == "exact":
            raise UnsupportedMethodError(
                f"exact joint digit masses are only available at lag 1, not {lag}",
                lag=lag,
            )
        ulam = _operator_for(op, ctx)
        if pushed is None or marginal_cells is None:
            pushed = _pushed_cylinders(ulam, digit_cap, ctx)
            marginal_cells = exact_cell_masses(ulam, ctx)
        # the first application of T is exact, later ones go through the matrix
        while current < lag:
            pushed = pushed @ ulam.matrix
            marginal_cells = marginal_cells @ ulam.matrix
            current += 1
        overlap = _cylinder_overlap(ulam, digit_cap, ctx)
        yield lag, pushed @ overlap, marginal_cells @ overlap


def joint_digit_mass(
    i: int,
    j: int,
    lag: int,
    ctx: MeasureContext,
    method: MixingMethod = "ulam",
    *,
    op: UlamOperator | None = None,
) -> float:
    """Mass of the event ``digit_1 = i`` and ``digit_{1+lag} = j``."""
    for digit in (i, j):
        if digit < ctx.m:
            raise DomainError(f"digit {digit} is below m = {ctx.m}", m=ctx.m, digit=digit)
    cap = max(i, j)
    _, joint, _ = next(_joint_curve([lag], cap, ctx, op, method))
    return float(joint[i - ctx.m, j - ctx.m])


def _psi_from_joint(
    lag: int,
    joint: np.ndarray,
    column_marginal: np.ndarray,
    row_marginal: np.ndarray,
    method: MixingMethod,
    ctx: MeasureContext,
) -> MixingEstimate:
    ratio = np.abs(joint / np.outer(row_marginal, column_marginal) - 1.0)
    flat = int(np.argmax(ratio))
    row, col = np.unravel_index(flat, ratio.shape)
    return MixingEstimate(
        lag=lag,
        psi_hat=float(ratio[row, col]),
        pairs_evaluated=int(ratio.size),
        method=method if lag > 1 else "exact",
        argmax=(int(row) + ctx.m, int(col) + ctx.m),
    )


def psi_curve(
    lags: Sequence[int],
    digit_cap: int,
    ctx: MeasureContext,
    *,
    op: UlamOperator | None = None,
    method: MixingMethod = "ulam",
) -> list[MixingEstimate]:
    """psi estimates over rank-1 digit events for every requested lag.

    Past lag 1 the joint masses come from the Ulam model, and the column
    marginal is the model's own distribution of the later digit, so the
    estimate decays to zero instead of to the discretisation bias.
    """
    if digit_cap < ctx.m:
        raise DomainError(f"digit cap {digit_cap} is below m = {ctx.m}", m=ctx.m)
    row_marginal = digit_masses(digit_cap, ctx)
    return [
        _psi_from_joint(lag, joint, column, row_marginal, method, ctx)
        for lag, joint, column in _joint_curve(lags, digit_cap, ctx, op, method)
    ]


def psi_estimate(
    lag: int,
    digit_cap: int,
    ctx: MeasureContext,
    *,
    op: UlamOperator | None = None,
    method: MixingMethod = "ulam",
) -> MixingEstimate:
    return psi_curve([lag], digit_cap, ctx, op=op, method=method)[0]


def fit_exponential(
    lags: Sequence[int],
    values: Sequence[float],
    *,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
) -> PsiFit:
    """Least-squares fit of ``values ≈ amplitude * rate**lag`` in log space."""
    usable = [
        (lag, abs(value))
        for lag, value in zip(lags, values)
        if math.isfinite(value) and abs(value) > noise_floor
    ]
    if len(usable) < 3:
        raise FitError(
            f"need at least 3 lags above the noise floor, got {len(usable)}",
            usable=len(usable),
        )
    x = np.array([lag for lag, _ in usable], dtype=float)
    y = np.log([value for _, value in usable])
    slope, intercept = np.polyfit(x, y, 1)
    return PsiFit(
        amplitude=float(np.exp(intercept)),
        rate=float(np.exp(slope)),
        lags_used=tuple(int(lag) for lag, _ in usable),
    )


def fit_psi_decay(
    estimates: Sequence[MixingEstimate], *, noise_floor: float = DEFAULT_NOISE_FLOOR
) -> PsiFit:
    return fit_exponential(
        [e.lag for e in estimates],
        [e.psi_hat for e in estimates],
        noise_floor=noise_floor,
    )


def spectral_gap(
    op: UlamOperator,
    *,
    max_iter: int = 5_000,
    tol: float = 1e-7,
    window: int = 20,
    seed: int = 0,
) -> float:
    """Modulus of the subdominant eigenvalue of the Ulam matrix.

    Left power iteration restricted to zero-sum vectors, which the stationary
    direction does not reach. The growth rate is averaged over ``window``
    steps so complex or negative eigenvalues do not make it oscillate.
    """
    pi = stationary_vector(op)
    rng = np.random.default_rng(seed)
    vector = rng.standard_normal(op.cells)
    vector -= vector.sum() * pi
    vector /= np.linalg.norm(vector)
    log_growth: list[float] = []
    estimates: list[float] = []
    for iteration in range(1, max_iter + 1):
        vector = vector @ op.matrix
        vector -= vector.sum() * pi
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            return 0.0
        vector /= norm
        log_growth.append(math.log(norm))
        if len(log_growth) < window:
            continue
        estimates.append(math.exp(math.fsum(log_growth[-window:]) / window))
        if len(estimates) >= 2 * window and abs(estimates[-1] - estimates[-window]) < tol:
            logger.debug("spectral gap converged after %d iterations", iteration)
            return min(estimates[-1], 1.0)
    raise NumericalError(
        f"subdominant eigenvalue did not converge in {max_iter} iterations",
        iterations=max_iter,
        last_estimates=estimates[-5:],
    )


def correlation_decay_rate(
    op: UlamOperator,
    ctx: MeasureContext,
    *,
    lags: Sequence[int] = tuple(range(2, 16)),
    digit: int | None = None,
) -> PsiFit:
    """Fitted decay of the autocorrelation of one digit indicator."""
    digit = ctx.m if digit is None else digit
    if digit < ctx.m:
        raise DomainError(f"digit {digit} is below m = {ctx.m}", m=ctx.m, digit=digit)
    pi = stationary_vector(op)
    indicator = _cylinder_overlap(op, digit, ctx)[:, -1]
    mean = float(pi @ indicator)
    weighted = pi * indicator
    covariances: list[float] = []
    wanted = sorted(set(lags))
    step = 0
    for lag in wanted:
        while step < lag:
            weighted = weighted @ op.matrix
            step += 1
        covariances.append(float(weighted @ indicator) - mean**2)
    return fit_exponential(wanted, covariances)


def covariance_check(
    lags: Sequence[int],
    level: int,
    ctx: MeasureContext,
    *,
    op: UlamOperator | None = None,
    slack: float = 0.25,
) -> list[CovarianceRow]:
    """Compare covariances of truncated digits with the psi-mixing bound.

    The observable is ``digit * 1{digit <= level}``. The gate is the covariance
    inequality ``|Cov| <= psi_hat(lag) * sqrt(Var X * Var Y)``. Since the
    observable is non-negative, ``psi_hat(lag) * E X * E Y`` is reported as
    ``mean_bound``. Both sides come from the same joint masses.
    """
    if level < ctx.m:
        raise DomainError(f"truncation level {level} is below m = {ctx.m}", m=ctx.m)
    values = np.arange(ctx.m, level + 1, dtype=float)
    row_marginal = digit_masses(level, ctx)
    first_mean = float(values @ row_marginal)
    first_var = float(values**2 @ row_marginal) - first_mean**2
    rows: list[CovarianceRow] = []
    for lag, joint, column in _joint_curve(lags, level, ctx, op, "ulam"):
        estimate = _psi_from_joint(lag, joint, column, row_marginal, "ulam", ctx)
        later_mean = float(values @ column)
        later_var = float(values**2 @ column) - later_mean**2
        covariance = float(values @ joint @ values) - first_mean * later_mean
        scale = estimate.psi_hat * (1.0 + slack)
        rows.append(
            CovarianceRow(
                lag=lag,
                covariance=covariance,
                bound=scale * math.sqrt(max(first_var * later_var, 0.0)),
                psi_hat=estimate.psi_hat,
                mean_bound=scale * first_mean * later_mean,
            )
        )
    return rows


def nonzero_entries(op: UlamOperator) -> Iterator[tuple[int, int, float]]:
    rows, cols = np.nonzero(op.matrix)
    for row, col in zip(rows.tolist(), cols.tolist()):
        yield row, col, float(op.matrix[row, col])


def invariance_report(
    ctx: MeasureContext,
    *,
    cutoff: int = 1_000,
    grid_points: int = 1_000,
    intervals: int = 100,
    seed: int = 0,
) -> dict[str, float]:
    """Fixed-point residual of the density and pushforward error on random intervals."""
    density_fn = InvariantDensity(ctx)
    grid = np.linspace(0.0, ctx.theta, grid_points)
    residual = max(
        abs(transfer_apply(density_fn, float(x), cutoff, ctx) - float(density_fn(x)))
        for x in grid
    )
    rng = np.random.default_rng(seed)
    endpoints = np.sort(rng.uniform(0.0, ctx.theta, size=(intervals, 2)), axis=1)
    pushforward = max(
        abs(preimage_mass(a, b, ctx) - measure_interval(a, b, ctx))
        for a, b in endpoints.tolist()
    )
    return {"fixed_point_residual": residual, "pushforward_error": pushforward}
