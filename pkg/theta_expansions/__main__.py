from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler

from theta_expansions import __version__, expansion, measure, transfer
from theta_expansions.config import THREADS_ENVVAR, load_config_file, resolve_config
from theta_expansions.errors import ThetaExpansionError
from theta_expansions.measure import MeasureContext
from theta_expansions.models import ExperimentConfig, ThetaParams, decimal_text
from theta_expansions.montecarlo import experiments
from theta_expansions.qfield import QuadNumber, parse_point
from theta_expansions.rendering import (
    DENSITY_COLUMNS,
    DIGIT_COLUMNS,
    PSI_COLUMNS,
    coordinate_text,
    density_rows,
    psi_rows,
    render_csv,
    render_json,
    summary_table,
    tag,
)

__all__ = ["cli", "run"]

logger = logging.getLogger(__name__)
_stderr = Console(stderr=True)

DEFAULT_PLACES = 20


class OutputFormat(str, Enum):
    json = "json"
    csv = "csv"


class ModeChoice(str, Enum):
    exact = "exact"
    interval = "interval"
    double = "double"


class NormingChoice(str, Enum):
    n_log_n = "n_log_n"
    n_log_n_pow = "n_log_n_pow"
    n_pow = "n_pow"
    table = "table"


class ExperimentChoice(str, Enum):
    khinchine = "khinchine"
    diamond_vaaler = "diamond-vaaler"
    max_digit = "max-digit"
    philipp = "philipp"
    frequencies = "frequencies"
    all = "all"


_RUNNERS = {
    ExperimentChoice.khinchine: experiments.khinchine_experiment,
    ExperimentChoice.diamond_vaaler: experiments.diamond_vaaler_experiment,
    ExperimentChoice.max_digit: experiments.max_digit_experiment,
    ExperimentChoice.philipp: experiments.philipp_experiment,
    ExperimentChoice.frequencies: experiments.frequencies_experiment,
}


def _version_callback(value: bool) -> None:
    if not value:
        return
    typer.echo(f"theta-expansions {__version__}")
    raise typer.Exit()


def _configure_logging(verbosity: int) -> None:
    if verbosity <= 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=_stderr, show_path=False)],
        force=True,
    )


@contextmanager
def _reporting_errors() -> Iterator[None]:
    try:
        yield
    except ThetaExpansionError as exc:
        typer.echo(render_json(exc.to_record()), err=True)
        raise typer.Exit(code=1) from exc
    except ZeroDivisionError as exc:
        record = {"error": "division_by_zero", "message": str(exc)}
        typer.echo(render_json(record), err=True)
        raise typer.Exit(code=1) from exc


def _emit(text: str, out: Path | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out is None:
        typer.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")


def _emit_record(record: dict[str, Any], out: Path | None) -> None:
    _emit(render_json(record), out)


def _emit_config(cfg: ExperimentConfig, out: Path | None) -> None:
    """Write the settings of a CSV run next to the file, or to stderr."""
    text = render_json(tag({"config": cfg.to_record()}, m=cfg.m, formula_id="config"))
    if out is None:
        typer.echo(text, err=True)
        return
    sidecar = out.with_suffix(".config.json")
    sidecar.write_text(text + "\n", encoding="utf-8")
    logger.info("wrote run settings to %s", sidecar)


def _parse_digits(text: str) -> list[int]:
    try:
        return [int(item) for item in text.replace(" ", "").split(",") if item]
    except ValueError as exc:
        raise typer.BadParameter(f"not a comma-separated digit list: {text!r}") from exc


def _m_option() -> Any:
    return typer.Option(2, "--m", help="Field parameter m, theta = 1/sqrt(m).")


def _output_option() -> Any:
    return typer.Option(OutputFormat.json, "--output", help="Record format.")


def _out_option() -> Any:
    return typer.Option(None, "--out", help="Write the output to this file.")


def _places_option() -> Any:
    return typer.Option(
        DEFAULT_PLACES, "--places", min=0, help="Decimal places for exact points."
    )


cli = typer.Typer(
    add_completion=False,
    help="Digits, invariant measure, transfer operator and limit laws of theta-expansions.",
)
measure_app = typer.Typer(help="Closed forms of the invariant measure.")
cli.add_typer(measure_app, name="measure")


@cli.callback()
def main(
    verbose: int = typer.Option(
        0, "--verbose", "-v", count=True, help="Log more (repeat for debug output)."
    ),
    _version: bool = typer.Option(
        False,
        "--version",
        callback=_version_callback,
        is_eager=True,
        help="Show version and exit.",
    ),
) -> None:
    _configure_logging(verbose)


@cli.command("expand")
def expand_command(
    m: int = _m_option(),
    x: str = typer.Option(..., "--x", help="Start point: 1/2, 0+1/2√2 or a decimal."),
    n: int = typer.Option(10, "--n", help="Number of digits."),
    mode: ModeChoice = typer.Option(ModeChoice.exact, "--mode"),
    precision: int = typer.Option(
        expansion.DEFAULT_PRECISION, "--precision", help="Initial interval precision in bits."
    ),
    max_precision: int = typer.Option(expansion.MAX_PRECISION, "--max-precision"),
    places: int = _places_option(),
    output: OutputFormat = _output_option(),
    out: Path | None = _out_option(),
) -> None:
    """Expand a point into its digits."""
    with _reporting_errors():
        params = ThetaParams(m)
        point = parse_point(x)
        chosen = mode.value
        if isinstance(point, float) and chosen == "exact":
            logger.info("decimal start %s cannot be expanded exactly, using double mode", x)
            chosen = "double"
        result = expansion.expand(
            point, n, params, chosen, precision=precision, max_precision=max_precision
        )
        if output is OutputFormat.csv:
            rows = [
                {"m": m, "formula_id": "expand", "index": index, "digit": digit}
                for index, digit in enumerate(result.digits, start=1)
            ]
            _emit(render_csv(DIGIT_COLUMNS, rows), out)
            return
        record = tag(result.to_record(places), m=m, formula_id="expand")
        record.update({"x": x, "n": n, "precision": result.precision})
        _emit_record(record, out)


@cli.command("evaluate")
def evaluate_command(
    m: int = _m_option(),
    digits: str = typer.Option(..., "--digits", help="Comma-separated digits."),
    tail: str | None = typer.Option(None, "--tail", help="Point appended after the digits."),
    exact: bool = typer.Option(False, "--exact", help="Evaluate in Q(√m)."),
    places: int = _places_option(),
    out: Path | None = _out_option(),
) -> None:
    """Evaluate a finite expansion back to a point."""
    with _reporting_errors():
        params = ThetaParams(m)
        parsed = _parse_digits(digits)
        value = expansion.evaluate(
            parsed, params, parse_point(tail) if tail is not None else None, exact=exact
        )
        convergent = expansion.convergents(parsed, params, exact=exact)[-1] if parsed else None
        record = tag(
            {
                "digits": parsed,
                "value": str(value) if isinstance(value, QuadNumber) else value,
                "value_decimal": decimal_text(value, places, m),
                "convergent": list(convergent) if convergent else None,
            },
            m=m,
            formula_id="evaluate",
        )
        _emit_record(record, out)


@cli.command("cylinder")
def cylinder_command(
    m: int = _m_option(),
    digits: str = typer.Option(..., "--digits", help="Comma-separated digits."),
    places: int = _places_option(),
    out: Path | None = _out_option(),
) -> None:
    """Endpoints of the cylinder of a digit block."""
    with _reporting_errors():
        params = ThetaParams(m)
        parsed = _parse_digits(digits)
        window = expansion.cylinder_rank_n(parsed, params)
        ctx = MeasureContext(params)
        record = tag(
            {
                "digits": parsed,
                **window.to_record(places),
                "diameter": window.diameter,
                "mass": measure.measure_interval(window.lo, window.hi, ctx),
            },
            m=m,
            formula_id="cylinder",
        )
        _emit_record(record, out)


def _measure_record(
    m: int, formula_id: str, value: float, out: Path | None, **inputs: Any
) -> None:
    _emit_record(tag({**inputs, "value": value}, m=m, formula_id=formula_id), out)


@measure_app.command("density")
def measure_density(
    m: int = _m_option(),
    x: str = typer.Option(..., "--x"),
    out: Path | None = _out_option(),
) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        _measure_record(m, "density", measure.density(parse_point(x), ctx), out, x=x)


@measure_app.command("cdf")
def measure_cdf(
    m: int = _m_option(),
    x: str = typer.Option(..., "--x"),
    out: Path | None = _out_option(),
) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        _measure_record(m, "cdf", measure.cdf(parse_point(x), ctx), out, x=x)


@measure_app.command("interval")
def measure_interval_command(
    m: int = _m_option(),
    a: str = typer.Option(..., "--a"),
    b: str = typer.Option(..., "--b"),
    out: Path | None = _out_option(),
) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        value = measure.measure_interval(parse_point(a), parse_point(b), ctx)
        _measure_record(m, "measure_interval", value, out, a=a, b=b)


@measure_app.command("digit")
def measure_digit(
    m: int = _m_option(),
    i: int = typer.Option(..., "--i"),
    out: Path | None = _out_option(),
) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        _measure_record(m, "digit_mass", measure.digit_mass(i, ctx), out, i=i)


@measure_app.command("tail")
def measure_tail(
    m: int = _m_option(),
    k: int = typer.Option(..., "--k"),
    out: Path | None = _out_option(),
) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        _measure_record(m, "tail_mass", measure.tail_mass(k, ctx), out, k=k)


@measure_app.command("moment")
def measure_moment(
    m: int = _m_option(),
    N: int = typer.Option(..., "--N", help="Truncation level."),
    order: int = typer.Option(1, "--order", min=1, max=2),
    out: Path | None = _out_option(),
) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        value = measure.truncated_moment(N, 1 if order == 1 else 2, ctx)
        _measure_record(m, "truncated_moment", value, out, N=N, order=order)


@measure_app.command("mean")
def measure_mean(m: int = _m_option(), out: Path | None = _out_option()) -> None:
    with _reporting_errors():
        _measure_record(m, "mean", measure.mean(MeasureContext.for_m(m)), out)


@measure_app.command("khinchine")
def measure_khinchine(m: int = _m_option(), out: Path | None = _out_option()) -> None:
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        _measure_record(m, "khinchine_constant", measure.khinchine_constant(ctx), out)


@cli.command("quantile")
def quantile_command(
    m: int = _m_option(),
    u: float = typer.Option(..., "--u", help="Probability in [0, 1]."),
    out: Path | None = _out_option(),
) -> None:
    """Inverse CDF of the invariant measure."""
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        _measure_record(m, "quantile", measure.quantile(u, ctx), out, u=u)


@cli.command("invariant-check")
def invariant_check_command(
    m: int = _m_option(),
    cutoff: int = typer.Option(1_000, "--cutoff", help="Explicit inverse branches."),
    grid: int = typer.Option(1_000, "--grid", help="Points for the fixed-point residual."),
    intervals: int = typer.Option(100, "--intervals", help="Random intervals to push back."),
    seed: int = typer.Option(0, "--seed"),
    out: Path | None = _out_option(),
) -> None:
    """Check that the density is a fixed point and the measure is invariant."""
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        report = transfer.invariance_report(
            ctx, cutoff=cutoff, grid_points=grid, intervals=intervals, seed=seed
        )
        record = tag(
            {
                "cutoff": cutoff,
                "grid": grid,
                "intervals": intervals,
                "seed": seed,
                **report,
                "fixed_point_ok": report["fixed_point_residual"] < 1e-10,
                "pushforward_ok": report["pushforward_error"] < 1e-9,
            },
            m=m,
            formula_id="invariant_check",
        )
        _emit_record(record, out)


@cli.command("ulam")
def ulam_command(
    m: int = _m_option(),
    cells: int = typer.Option(1024, "--cells", min=2),
    output: OutputFormat = _output_option(),
    out: Path | None = _out_option(),
    matrix_out: Path | None = typer.Option(
        None, "--matrix-out", help="Write the matrix as row,col,value text."
    ),
) -> None:
    """Recover the invariant density from the Ulam discretisation."""
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        op = transfer.build_ulam(cells, ctx)
        density = transfer.stationary_density(op, ctx)
        if matrix_out is not None:
            matrix_out.write_text(coordinate_text(transfer.nonzero_entries(op)), encoding="utf-8")
        if output is OutputFormat.csv:
            exact = measure.density_array(op.midpoints, ctx)
            _emit(render_csv(DENSITY_COLUMNS, density_rows(op, density, exact)), out)
            return
        upto = max(m, 10)
        record = tag(
            {
                "cells": cells,
                "branch_cutoff": op.branch_cutoff,
                "max_row_error": float(np.abs(op.matrix.sum(axis=1) - 1.0).max()),
                "l1_error": transfer.density_l1_error(density, op, ctx),
                "spectral_gap": transfer.spectral_gap(op),
                "induced_digit_masses": transfer.induced_digit_masses(density, op, upto, ctx),
                "digit_masses": measure.digit_masses(upto, ctx),
            },
            m=m,
            formula_id="ulam",
        )
        _emit_record(record, out)


@cli.command("mixing")
def mixing_command(
    m: int = _m_option(),
    lags: int = typer.Option(12, "--lags", min=1, help="Largest lag."),
    digit_cap: int = typer.Option(transfer.DEFAULT_DIGIT_CAP, "--digit-cap"),
    cells: int = typer.Option(transfer.DEFAULT_CELLS, "--cells", min=2),
    output: OutputFormat = _output_option(),
    out: Path | None = _out_option(),
) -> None:
    """psi-mixing estimates over digit events and their exponential fit."""
    with _reporting_errors():
        ctx = MeasureContext.for_m(m)
        op = transfer.build_ulam(cells, ctx)
        estimates = transfer.psi_curve(range(1, lags + 1), digit_cap, ctx, op=op)
        if output is OutputFormat.csv:
            _emit(render_csv(PSI_COLUMNS, psi_rows(m, estimates)), out)
            return
        fit = transfer.fit_psi_decay(estimates)
        record = tag(
            {
                "cells": cells,
                "digit_cap": digit_cap,
                "psi": psi_rows(m, estimates),
                "fit": {
                    "amplitude": fit.amplitude,
                    "rate": fit.rate,
                    "lags_used": fit.lags_used,
                },
                "spectral_gap": transfer.spectral_gap(op),
            },
            m=m,
            formula_id="psi_fit",
        )
        _emit_record(record, out)


def _print_estimates(report: experiments.ExperimentReport) -> None:
    if not logger.isEnabledFor(logging.INFO):
        return
    for key, rows in report.estimates.items():
        if isinstance(rows, list) and rows and isinstance(rows[0], dict):
            _stderr.print(summary_table(f"{report.name}: {key}", rows))


@cli.command("experiment")
def experiment_command(
    name: ExperimentChoice = typer.Argument(..., help="Experiment to run."),
    m: int | None = typer.Option(None, "--m", help="Field parameter m."),
    n: int | None = typer.Option(None, "--n", help="Horizon."),
    trials: int | None = typer.Option(None, "--trials"),
    seed: int | None = typer.Option(None, "--seed"),
    epsilons: str | None = typer.Option(None, "--epsilons", help="e.g. 0.5,1,2"),
    norming: NormingChoice | None = typer.Option(None, "--norming"),
    norming_p: float | None = typer.Option(None, "--norming-p"),
    M: float | None = typer.Option(None, "--M", help="Exceedance multiplier."),
    checkpoints: str | None = typer.Option(None, "--checkpoints", help="e.g. 1000,10000"),
    threads: int | None = typer.Option(None, "--threads", envvar=THREADS_ENVVAR),
    points_per_decade: int | None = typer.Option(None, "--points-per-decade"),
    config: Path | None = typer.Option(None, "--config", help="YAML file of settings."),
    output: OutputFormat = _output_option(),
    out: Path | None = _out_option(),
    series_out: Path | None = typer.Option(
        None, "--series-out", help="Write running ratio series as CSV."
    ),
) -> None:
    """Run a Monte Carlo limit-law experiment."""
    with _reporting_errors():
        file_values = load_config_file(config) if config is not None else {}
        cfg = resolve_config(
            {
                "m": m,
                "n": n,
                "trials": trials,
                "seed": seed,
                "epsilons": epsilons,
                "norming": norming.value if norming is not None else None,
                "norming_p": norming_p,
                "M": M,
                "checkpoints": checkpoints,
                "threads": threads,
                "points_per_decade": points_per_decade,
            },
            file_values,
        )
        logger.info("resolved configuration %s", cfg.to_record())
        if name is ExperimentChoice.all:
            reports = list(experiments.run_all(cfg).values())
        else:
            reports = [_RUNNERS[name](cfg)]

        for report in reports:
            _print_estimates(report)
        if series_out is not None:
            series = [row for report in reports for row in report.series]
            series_out.write_text(
                render_csv(experiments.SERIES_COLUMNS, series), encoding="utf-8"
            )
        if output is OutputFormat.csv:
            rows = [row for report in reports for row in report.rows]
            _emit(render_csv(experiments.TRIAL_COLUMNS, rows), out)
            _emit_config(cfg, out)
            return
        if len(reports) == 1:
            record = tag(reports[0].summary(), m=cfg.m, formula_id=reports[0].name)
        else:
            record = tag(
                {
                    "config": cfg.to_record(),
                    "experiments": {r.name: r.summary() for r in reports},
                },
                m=cfg.m,
                formula_id="all",
            )
        _emit_record(record, out)


def run(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return its exit code instead of exiting."""
    command = typer.main.get_command(cli)
    try:
        command.main(
            args=list(argv) if argv is not None else None,
            prog_name="theta-expansions",
            standalone_mode=True,
        )
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    cli()
