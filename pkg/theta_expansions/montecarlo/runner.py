from __future__ import annotations

import asyncio
import logging
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from theta_expansions.measure import MeasureContext
from theta_expansions.models import ExperimentConfig, TrajectoryOptions, TrajectoryStats
from theta_expansions.montecarlo.trajectory import run_trajectory, sample_gamma

logger = logging.getLogger(__name__)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(seed ^ trial)


def default_options(cfg: ExperimentConfig, *, digit_cap: int = 0) -> TrajectoryOptions:
    return TrajectoryOptions(
        checkpoints=cfg.horizons(),
        level="n_log_n",
        norming=cfg.norming,
        multiplier=cfg.M,
        points_per_decade=cfg.points_per_decade,
        digit_cap=digit_cap,
    )


def run_trial(
    cfg: ExperimentConfig, trial: int, options: TrajectoryOptions
) -> TrajectoryStats:
    ctx = MeasureContext.for_m(cfg.m)
    start = sample_gamma(trial_rng(cfg.seed, trial), ctx)
    return run_trajectory(start, cfg.n, ctx, options, trial=trial)


def run_batch(
    cfg: ExperimentConfig, trials: Sequence[int], options: TrajectoryOptions
) -> list[TrajectoryStats]:
    return [run_trial(cfg, trial, options) for trial in trials]


def _batches(trials: int, workers: int) -> list[list[int]]:
    size = max(1, -(-trials // (4 * workers)))
    return [list(range(lo, min(lo + size, trials))) for lo in range(0, trials, size)]


async def gather_trials(
    cfg: ExperimentConfig,
    options: TrajectoryOptions,
    *,
    executor: ProcessPoolExecutor,
    max_parallel: int,
) -> list[TrajectoryStats]:
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(max_parallel)

    async def submit(batch: list[int]) -> list[TrajectoryStats]:
        async with semaphore:
            logger.debug("running trials %d..%d", batch[0], batch[-1])
            return await loop.run_in_executor(executor, run_batch, cfg, batch, options)

    batches = await asyncio.gather(
        *(submit(batch) for batch in _batches(cfg.trials, max_parallel))
    )
    return [stats for batch in batches for stats in batch]


def run_ensemble(
    cfg: ExperimentConfig, options: TrajectoryOptions | None = None
) -> list[TrajectoryStats]:
    """All trials of ``cfg``, ordered by trial index.

    Each trial draws its start from its own generator seeded with
    ``cfg.seed ^ trial``, so the result does not depend on ``cfg.threads``.
    """
    options = options or default_options(cfg)
    if cfg.threads == 1:
        results = run_batch(cfg, range(cfg.trials), options)
    else:
        with ProcessPoolExecutor(max_workers=cfg.threads) as executor:
            results = asyncio.run(
                gather_trials(cfg, options, executor=executor, max_parallel=cfg.threads)
            )
    short = sum(stats.short for stats in results)
    if short:
        logger.warning("%d of %d trajectories terminated early", short, cfg.trials)
    return sorted(results, key=lambda stats: stats.trial)
