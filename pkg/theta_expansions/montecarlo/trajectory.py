from __future__ import annotations

import logging
import math

import numpy as np

from theta_expansions.errors import DomainError
from theta_expansions.measure import MeasureContext, quantile
from theta_expansions.models import (
    NormingClass,
    NormingSequence,
    RunningPoint,
    Snapshot,
    TrajectoryOptions,
    TrajectoryStats,
    TruncationLevel,
)

logger = logging.getLogger(__name__)

_DIGIT_LIMIT = 2**63
_CONDENSED_DECAY = 1.1


def sample_gamma(rng: np.random.Generator, ctx: MeasureContext) -> float:
    """Draw a start point from the invariant measure by inverting its CDF."""
    while True:
        u = float(rng.random())
        if u > 0.0:
            return quantile(u, ctx)


def sample_gamma_array(
    rng: np.random.Generator, size: int, ctx: MeasureContext
) -> np.ndarray:
    u = rng.random(size)
    u = np.where(u > 0.0, u, np.nextafter(0.0, 1.0))
    return np.minimum(np.expm1(u * ctx.params.log1p_theta2) / ctx.theta, ctx.theta)


def norming_classify(norming: NormingSequence, *, horizon: int = 1_000_000) -> NormingClass:
    """Whether ``sum 1/a(n)`` converges."""
    if norming.family == "n_log_n":
        return "divergent"
    if norming.family in ("n_log_n_pow", "n_pow"):
        return "convergent" if norming.p > 1.0 else "divergent"
    return _classify_table(norming, horizon)


def _classify_table(norming: NormingSequence, horizon: int) -> NormingClass:
    # Cauchy condensation: sum 1/a(n) converges iff sum 2^k/a(2^k) does. The
    # condensed terms are compared against k^-1 by their fitted log-log slope.
    values = norming.values(min(horizon, len(norming.table)))
    logger.warning(
        "classifying a tabulated norming sequence heuristically from %d entries",
        len(values),
    )
    exponents = np.arange(1, int(math.log2(len(values))) + 1)
    if len(exponents) < 4:
        return "divergent"
    powers = 2**exponents
    condensed = powers / values[powers - 1]
    tail = slice(len(exponents) // 2, None)
    slope, _ = np.polyfit(np.log(exponents[tail]), np.log(condensed[tail]), 1)
    return "convergent" if -slope > _CONDENSED_DECAY else "divergent"


def check_regularity(norming: NormingSequence, n: int) -> bool:
    """Check that ``a(k)/k`` is non-decreasing up to ``n``; warn otherwise."""
    values = norming.values(n)
    slope = values / np.arange(1, n + 1)
    regular = bool(np.all(np.diff(slope) >= -1e-12 * slope[1:]))
    if not regular:
        logger.warning(
            "norming sequence %s has a(n)/n decreasing somewhere below %d",
            norming.label(),
            n,
        )
    return regular


def truncation_level(level: TruncationLevel, n: int, m: int) -> int | None:
    if level is None:
        return None
    if level == "n_log_n":
        return max(m, math.floor(n * math.log(n)))
    return int(level)


def running_grid(n: int, points_per_decade: int) -> list[int]:
    """Geometrically spaced indices in ``[2, n]``."""
    if points_per_decade <= 0 or n < 2:
        return []
    count = int(math.log10(n) * points_per_decade) + 1
    grid = np.unique(np.round(np.logspace(math.log10(2), math.log10(n), count)))
    return [int(k) for k in grid if 2 <= k <= n]


def run_trajectory(
    start: float,
    n: int,
    ctx: MeasureContext,
    options: TrajectoryOptions | None = None,
    *,
    trial: int = 0,
) -> TrajectoryStats:
    """Follow ``n`` double-precision steps from ``start`` and collect digit sums.

    Sums are Python integers. Digits above the smallest truncation level are
    kept as ``(k, digit)`` records so every checkpoint gets its own level.
    """
    options = options or TrajectoryOptions()
    theta = ctx.theta
    if not 0.0 < start <= theta * (1.0 + 1e-15):
        raise DomainError(f"start {start} is outside (0, θ]", start=start)
    if n < 1:
        raise DomainError(f"horizon must be >= 1, got {n}", n=n)

    m = ctx.m
    inv_theta = ctx.params.inv_theta
    checkpoints = sorted({c for c in options.checkpoints if 1 <= c < n} | {n})
    levels = [truncation_level(options.level, c, m) for c in checkpoints]
    finite_levels = [lv for lv in levels if lv is not None]
    record_above = min(finite_levels) if finite_levels else None

    norming = options.norming
    norms: list[float] = norming.values(n).tolist() if norming is not None else []
    thresholds = [options.multiplier * value for value in norms]

    grid = running_grid(n, options.points_per_decade)
    grid_index = 0
    next_grid = grid[0] if grid else 0

    digit_cap = options.digit_cap
    counts = [0] * (digit_cap - m + 1) if digit_cap >= m else []

    large: list[tuple[int, int]] = []
    snapshots: list[Snapshot] = []
    running: list[RunningPoint] = []
    total = 0
    largest = 0
    starred = 0
    exceedances = 0
    block_max = -math.inf
    checkpoint_index = 0
    next_checkpoint = checkpoints[0]
    short = False
    steps = 0
    x = start

    for k in range(1, n + 1):
        y = inv_theta / x
        digit = int(y)
        if digit < m:
            digit = m
        frac = y - digit
        x = theta * frac if frac > 0.0 else 0.0

        total += digit
        if digit > largest:
            largest = digit
        if record_above is not None and digit > record_above:
            large.append((k, digit))
        if counts and digit <= digit_cap:
            counts[digit - m] += 1
        if norms:
            if digit >= thresholds[k - 1]:
                exceedances += 1
            if digit <= norms[k - 1]:
                starred += digit
            ratio = total / norms[k - 1]
            if ratio > block_max:
                block_max = ratio
        if k == next_grid:
            scale = k * math.log(k)
            running.append(
                RunningPoint(k=k, ratio=total / scale, trimmed_ratio=(total - largest) / scale)
            )
            grid_index += 1
            next_grid = grid[grid_index] if grid_index < len(grid) else 0
        steps = k

        if k == next_checkpoint:
            level = levels[checkpoint_index]
            remainder = sum(d for _, d in large if level is not None and d > level)
            snapshots.append(
                Snapshot(
                    n=k,
                    S_n=total,
                    L_n=largest,
                    truncated_S=total - remainder,
                    remainder_R=remainder,
                    level=level,
                    exceedance_count=exceedances,
                    normed=total / norms[k - 1] if norms else math.nan,
                    block_max_normed=block_max if norms else math.nan,
                    starred_S=starred,
                )
            )
            block_max = -math.inf
            checkpoint_index += 1
            if checkpoint_index < len(checkpoints):
                next_checkpoint = checkpoints[checkpoint_index]

        if x == 0.0 or digit >= _DIGIT_LIMIT:
            short = k < n
            break

    if short:
        logger.warning(
            "trial %d terminated after %d of %d steps from start %r", trial, steps, n, start
        )

    final_level = truncation_level(options.level, n, m)
    final_remainder = sum(d for _, d in large if final_level is not None and d > final_level)
    return TrajectoryStats(
        n=steps,
        S_n=total,
        L_n=largest,
        truncated_S=total - final_remainder,
        remainder_R=final_remainder,
        level=final_level,
        exceedance_count=exceedances,
        short=short,
        start=start,
        trial=trial,
        snapshots=tuple(snapshots),
        running_ratios=tuple(running),
        digit_counts=tuple(counts),
    )
