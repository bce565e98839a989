"""The limit-law experiments run over an ensemble of trajectories.

Every experiment returns an :class:`ExperimentReport`: one row per trial and
checkpoint for CSV output, plus ``targets``, ``estimates`` and ``bounds`` for
the JSON summary.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from scipy import stats

from theta_expansions.measure import MeasureContext, digit_masses, tail_mass
from theta_expansions.models import ExperimentConfig, Snapshot, TrajectoryStats
from theta_expansions.montecarlo.runner import default_options, run_ensemble
from theta_expansions.montecarlo.trajectory import check_regularity, norming_classify

logger = logging.getLogger(__name__)

ExperimentName = Literal[
    "khinchine", "diamond_vaaler", "max_digit", "philipp", "frequencies"
]

TRIAL_COLUMNS = (
    "m",
    "formula_id",
    "trial",
    "n",
    "S_n",
    "L_n",
    "trimmed",
    "truncated_S",
    "remainder_R",
    "level",
    "exceedance_count",
    "normed",
    "block_max_normed",
    "starred_S",
    "short",
)
SERIES_COLUMNS = ("m", "formula_id", "trial", "k", "ratio", "trimmed_ratio")
FREQUENCY_DIGIT_CAP = 10


@dataclass(frozen=True)
class ExperimentReport:
    name: ExperimentName
    config: ExperimentConfig
    rows: tuple[dict[str, Any], ...]
    targets: dict[str, Any]
    estimates: dict[str, Any]
    bounds: dict[str, Any]
    series: tuple[dict[str, Any], ...] = ()

    def summary(self) -> dict[str, Any]:
        return {
            "experiment": self.name,
            "config": self.config.to_record(),
            "targets": self.targets,
            "estimates": self.estimates,
            "bounds": self.bounds,
        }


def _trial_rows(
    name: ExperimentName, m: int, ensemble: Sequence[TrajectoryStats]
) -> tuple[dict[str, Any], ...]:
    rows = []
    for trajectory in ensemble:
        for snap in trajectory.snapshots:
            rows.append(
                {
                    "m": m,
                    "formula_id": name,
                    "trial": trajectory.trial,
                    "n": snap.n,
                    "S_n": snap.S_n,
                    "L_n": snap.L_n,
                    "trimmed": snap.trimmed,
                    "truncated_S": snap.truncated_S,
                    "remainder_R": snap.remainder_R,
                    "level": snap.level,
                    "exceedance_count": snap.exceedance_count,
                    "normed": snap.normed,
                    "block_max_normed": snap.block_max_normed,
                    "starred_S": snap.starred_S,
                    "short": trajectory.short,
                }
            )
    return tuple(rows)


def _snapshots_at(ensemble: Sequence[TrajectoryStats], n: int) -> list[Snapshot]:
    return [snap for t in ensemble for snap in t.snapshots if snap.n == n]


def _binomial_se(p: float, trials: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1.0 - p) / trials)


def corrected_target(n: int, ctx: MeasureContext) -> float:
    """Finite-n centring ``C (log n + log log n) / log n`` of ``S_n/(n log n)``."""
    log_n = math.log(n)
    return ctx.C * (log_n + math.log(log_n)) / log_n


def khinchine_experiment(
    cfg: ExperimentConfig, ensemble: Sequence[TrajectoryStats] | None = None
) -> ExperimentReport:
    ctx = MeasureContext.for_m(cfg.m)
    ensemble = run_ensemble(cfg) if ensemble is None else ensemble
    exceedance = []
    per_horizon = []
    for n in cfg.horizons():
        snaps = _snapshots_at(ensemble, n)
        scale = n * math.log(n)
        ratios = np.array([s.S_n / scale for s in snaps])
        truncated = np.array([s.truncated_S / scale for s in snaps])
        with_remainder = float(np.mean([s.remainder_R > 0 for s in snaps]))
        remainder_bound = ctx.C / math.log(n)
        for eps in cfg.epsilons:
            exceedance.append(
                {
                    "n": n,
                    "epsilon": eps,
                    "fraction": float(np.mean(np.abs(ratios - ctx.C) > eps)),
                }
            )
        per_horizon.append(
            {
                "n": n,
                "trials": len(snaps),
                "median_ratio": float(np.median(ratios)),
                "corrected_target": corrected_target(n, ctx),
                "remainder_fraction": with_remainder,
                "remainder_bound": remainder_bound,
                "remainder_bound_3se": remainder_bound
                + 3 * _binomial_se(remainder_bound, len(snaps)),
                "truncated_variance": float(np.var(truncated, ddof=1))
                if len(snaps) > 1
                else 0.0,
            }
        )
    return ExperimentReport(
        name="khinchine",
        config=cfg,
        rows=_trial_rows("khinchine", cfg.m, ensemble),
        targets={"C": ctx.C, "corrected": [(h["n"], h["corrected_target"]) for h in per_horizon]},
        estimates={"exceedance": exceedance, "horizons": per_horizon},
        bounds={"remainder": [(h["n"], h["remainder_bound_3se"]) for h in per_horizon]},
    )


def _fluctuation(values: np.ndarray) -> float:
    return float(np.max(np.abs(values - np.median(values))))


def diamond_vaaler_experiment(
    cfg: ExperimentConfig, ensemble: Sequence[TrajectoryStats] | None = None
) -> ExperimentReport:
    ctx = MeasureContext.for_m(cfg.m)
    ensemble = run_ensemble(cfg) if ensemble is None else ensemble
    per_horizon = []
    for n in cfg.horizons():
        snaps = _snapshots_at(ensemble, n)
        scale = n * math.log(n)
        trimmed = np.array([s.trimmed / scale for s in snaps])
        untrimmed = np.array([s.S_n / scale for s in snaps])
        per_horizon.append(
            {
                "n": n,
                "median_trimmed": float(np.median(trimmed)),
                "iqr_trimmed": float(stats.iqr(trimmed)),
                "iqr_untrimmed": float(stats.iqr(untrimmed)),
                "corrected_target": corrected_target(n, ctx),
            }
        )

    calmer = []
    series = []
    for trajectory in ensemble:
        for point in trajectory.running_ratios:
            series.append(
                {
                    "m": cfg.m,
                    "formula_id": "diamond_vaaler",
                    "trial": trajectory.trial,
                    "k": point.k,
                    "ratio": point.ratio,
                    "trimmed_ratio": point.trimmed_ratio,
                }
            )
        last_decade = [p for p in trajectory.running_ratios if 10 * p.k >= trajectory.n]
        if len(last_decade) >= 2:
            trimmed_fluct = _fluctuation(np.array([p.trimmed_ratio for p in last_decade]))
            plain_fluct = _fluctuation(np.array([p.ratio for p in last_decade]))
            calmer.append(trimmed_fluct <= plain_fluct)

    return ExperimentReport(
        name="diamond_vaaler",
        config=cfg,
        rows=_trial_rows("diamond_vaaler", cfg.m, ensemble),
        targets={"C": ctx.C, "corrected": [(h["n"], h["corrected_target"]) for h in per_horizon]},
        estimates={
            "horizons": per_horizon,
            "trimmed_calmer_fraction": float(np.mean(calmer)) if calmer else None,
        },
        bounds={},
        series=tuple(series),
    )


def max_digit_experiment(
    cfg: ExperimentConfig, ensemble: Sequence[TrajectoryStats] | None = None
) -> ExperimentReport:
    ctx = MeasureContext.for_m(cfg.m)
    ensemble = run_ensemble(cfg) if ensemble is None else ensemble
    table = []
    for n in cfg.horizons():
        snaps = _snapshots_at(ensemble, n)
        scale = n * math.log(n)
        for eps in cfg.epsilons:
            threshold = eps * scale
            probability = float(np.mean([s.L_n > threshold for s in snaps]))
            bound = ctx.C / (eps * math.log(n))
            union = n * tail_mass(max(ctx.m, math.floor(threshold) + 1), ctx)
            table.append(
                {
                    "n": n,
                    "epsilon": eps,
                    "probability": probability,
                    "bound": bound,
                    "union_bound": min(union, 1.0),
                    "bound_3se": bound + 3 * _binomial_se(bound, len(snaps)),
                }
            )
    return ExperimentReport(
        name="max_digit",
        config=cfg,
        rows=_trial_rows("max_digit", cfg.m, ensemble),
        targets={},
        estimates={"table": [{k: row[k] for k in ("n", "epsilon", "probability")} for row in table]},
        bounds={"table": table},
    )


def exceedance_prediction(cfg: ExperimentConfig, ctx: MeasureContext) -> np.ndarray:
    """Expected number of ``k <= n`` with ``digit_k >= M a(k)``, for every ``n``."""
    norms = cfg.norming.values(cfg.n)
    thresholds = np.maximum(ctx.m, np.ceil(cfg.M * norms))
    return np.cumsum(np.log1p(1.0 / thresholds) / ctx.params.log1p_theta2)


def philipp_experiment(
    cfg: ExperimentConfig, ensemble: Sequence[TrajectoryStats] | None = None
) -> ExperimentReport:
    ctx = MeasureContext.for_m(cfg.m)
    case = norming_classify(cfg.norming, horizon=cfg.n)
    regular = check_regularity(cfg.norming, cfg.n)
    ensemble = run_ensemble(cfg) if ensemble is None else ensemble
    predicted = exceedance_prediction(cfg, ctx)
    norms = cfg.norming.values(cfg.n)
    asymptotic = np.cumsum(np.where(np.arange(1, cfg.n + 1) >= 2, ctx.C / (cfg.M * norms), 0.0))

    per_horizon = []
    for n in cfg.horizons():
        snaps = _snapshots_at(ensemble, n)
        normed = np.array([s.normed for s in snaps])
        counts = np.array([s.exceedance_count for s in snaps])
        per_horizon.append(
            {
                "n": n,
                "median_normed": float(np.median(normed)),
                "max_normed": float(np.max(normed)),
                "median_starred_normed": float(
                    np.median([s.starred_S / norms[n - 1] for s in snaps])
                ),
                "median_block_max_normed": float(
                    np.median([s.block_max_normed for s in snaps])
                ),
                "mean_exceedances": float(np.mean(counts)),
                "any_exceedance_fraction": float(np.mean(counts > 0)),
                "predicted_exceedances": float(predicted[n - 1]),
                "asymptotic_exceedances": float(asymptotic[n - 1]),
            }
        )
    return ExperimentReport(
        name="philipp",
        config=cfg,
        rows=_trial_rows("philipp", cfg.m, ensemble),
        targets={
            "case": case,
            "norming": cfg.norming.label(),
            "regular": regular,
            "normed_limit": "zero" if case == "convergent" else "unbounded",
        },
        estimates={"horizons": per_horizon},
        bounds={
            "predicted_exceedances": [(h["n"], h["predicted_exceedances"]) for h in per_horizon]
        },
    )


def frequencies_experiment(
    cfg: ExperimentConfig,
    ensemble: Sequence[TrajectoryStats] | None = None,
    *,
    digit_cap: int = FREQUENCY_DIGIT_CAP,
) -> ExperimentReport:
    """Pooled empirical digit frequencies against the exact digit masses."""
    ctx = MeasureContext.for_m(cfg.m)
    if ensemble is None:
        ensemble = run_ensemble(cfg, default_options(cfg, digit_cap=digit_cap))
    counts = np.sum([t.digit_counts for t in ensemble], axis=0)
    steps = sum(t.n for t in ensemble)
    frequencies = counts / steps
    expected = digit_masses(digit_cap, ctx)
    deviation = np.abs(frequencies - expected)
    table = [
        {"digit": ctx.m + index, "frequency": float(f), "mass": float(p)}
        for index, (f, p) in enumerate(zip(frequencies, expected))
    ]
    return ExperimentReport(
        name="frequencies",
        config=cfg,
        rows=_trial_rows("frequencies", cfg.m, ensemble),
        targets={"masses": [row["mass"] for row in table]},
        estimates={"table": table, "steps": steps},
        bounds={"max_deviation": float(deviation.max())},
    )


def run_all(cfg: ExperimentConfig) -> dict[ExperimentName, ExperimentReport]:
    """The four limit-law experiments over one shared ensemble."""
    ensemble = run_ensemble(cfg, default_options(cfg))
    logger.info("ensemble of %d trials ready", len(ensemble))
    return {
        "khinchine": khinchine_experiment(cfg, ensemble),
        "diamond_vaaler": diamond_vaaler_experiment(cfg, ensemble),
        "max_digit": max_digit_experiment(cfg, ensemble),
        "philipp": philipp_experiment(cfg, ensemble),
    }
