import json
import math
import re
from pathlib import Path

import pytest
from typer.testing import CliRunner

import theta_expansions.__main__ as entrypoint
from theta_expansions import __version__

_ANSI_ESCAPE = re.compile(r"\x1b\[[0-9;]*m")

_SMALL_EXPERIMENT = ["--m", "2", "--n", "1000", "--trials", "6", "--seed", "42"]


def strip_ansi(value: str) -> str:
    return _ANSI_ESCAPE.sub("", value)


def test_help_lists_commands() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["--help"])
    output = strip_ansi(result.output)

    assert result.exit_code == 0
    for command in ("expand", "evaluate", "cylinder", "measure", "ulam", "mixing", "experiment"):
        assert command in output
    assert "--version" in output


def test_version_flag_prints_version_and_exits() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["--version"])

    assert result.exit_code == 0
    assert result.output.strip() == f"theta-expansions {__version__}"


def test_expand_one_half() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["expand", "--x", "1/2", "--n", "5"])
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["m"] == 2
    assert record["formula_id"] == "expand"
    assert record["mode"] == "exact"
    assert record["digits"] == [2, 2, 4, 2, 4]
    assert record["terminated"] is False


def test_expand_decimal_start_uses_double_mode() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["expand", "--x", "0.5", "--n", "5"])
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["mode"] == "double"
    assert record["digits"] == [2, 2, 4, 2, 4]


def test_expand_csv_header() -> None:
    runner = CliRunner()

    result = runner.invoke(
        entrypoint.cli, ["expand", "--x", "0+1/2√2", "--n", "3", "--output", "csv"]
    )

    assert result.exit_code == 0
    assert result.stdout == "m,formula_id,index,digit\n2,expand,1,2\n"


def test_expand_writes_to_file(tmp_path: Path) -> None:
    runner = CliRunner()
    out = tmp_path / "digits.json"

    result = runner.invoke(
        entrypoint.cli, ["expand", "--x", "1/2", "--n", "3", "--mode", "interval", "--out", str(out)]
    )

    assert result.exit_code == 0
    assert result.stdout == ""
    record = json.loads(out.read_text(encoding="utf-8"))
    assert record["digits"] == [2, 2, 4]
    assert record["precision"] >= 64


def test_evaluate_and_cylinder() -> None:
    runner = CliRunner()

    evaluated = runner.invoke(entrypoint.cli, ["evaluate", "--digits", "2,2,4"])
    window = runner.invoke(entrypoint.cli, ["cylinder", "--digits", "2,2"])

    assert evaluated.exit_code == 0
    assert json.loads(evaluated.stdout)["value_decimal"] == pytest.approx(
        5 / (7 * math.sqrt(2)), rel=1e-13
    )
    assert window.exit_code == 0
    record = json.loads(window.stdout)
    assert (record["lo"], record["hi"]) == ("0+1/3√2", "0+3/8√2")
    assert record["lo_open"] is True
    assert record["hi_open"] is True


def test_exact_points_are_printed_as_exact_decimals() -> None:
    runner = CliRunner()

    evaluated = runner.invoke(
        entrypoint.cli, ["evaluate", "--digits", "2", "--exact", "--places", "10"]
    )
    window = runner.invoke(entrypoint.cli, ["cylinder", "--digits", "2", "--places", "30"])
    expanded = runner.invoke(entrypoint.cli, ["expand", "--x", "1/2", "--n", "1"])

    assert evaluated.exit_code == 0
    assert json.loads(evaluated.stdout)["value_decimal"] == "0.7071067811"
    record = json.loads(window.stdout)
    assert record["hi_decimal"] == "0.707106781186547524400844362104"
    assert record["lo_decimal"] == "0.471404520791031682933896241403"
    # T(1/2) = 2 - sqrt(2)
    assert json.loads(expanded.stdout)["final_point_decimal"] == "0.58578643762690495119"


def test_places_must_be_non_negative() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["evaluate", "--digits", "2", "--places", "-1"])

    assert result.exit_code == 2


_C2 = 1 / math.log(1.5)


@pytest.mark.parametrize(
    ("args", "expected"),
    [
        (["measure", "tail", "--k", "3"], _C2 * math.log(4 / 3)),
        (["measure", "digit", "--i", "2"], _C2 * math.log(9 / 8)),
        (["measure", "density", "--x", "0"], _C2 / math.sqrt(2)),
        (["measure", "khinchine", "--m", "3"], 1 / math.log(4 / 3)),
        (["quantile", "--u", "0.5"], (math.sqrt(1.5) - 1) * math.sqrt(2)),
    ],
)
def test_measure_records(args: list[str], expected: float) -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, args)
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["value"] == pytest.approx(expected, rel=1e-12)
    assert list(record)[:2] == ["m", "formula_id"]


def test_domain_error_is_reported_as_json() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["measure", "digit", "--i", "1"])

    assert result.exit_code == 1
    assert '"error": "domain"' in result.output


def test_square_parameter_is_rejected() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["expand", "--m", "4", "--x", "1/2"])

    assert result.exit_code == 1
    assert '"error": "parameter"' in result.output


@pytest.mark.parametrize(
    "args",
    [
        ["expand"],
        ["expand", "--x", "1/2", "--colour", "blue"],
        ["experiment", "fibonacci"],
    ],
)
def test_usage_errors_exit_with_two(args: list[str]) -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, args)

    assert result.exit_code == 2


def test_ulam_density_csv() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["ulam", "--cells", "16", "--output", "csv"])
    lines = result.stdout.splitlines()

    assert result.exit_code == 0
    assert lines[0] == "m,formula_id,cell_midpoint,density,exact_density"
    assert len(lines) == 17
    assert lines[1].startswith("2,ulam_density,")


def test_ulam_matrix_out(tmp_path: Path) -> None:
    runner = CliRunner()
    matrix = tmp_path / "matrix.txt"

    result = runner.invoke(
        entrypoint.cli, ["ulam", "--cells", "8", "--matrix-out", str(matrix)]
    )

    assert result.exit_code == 0
    assert json.loads(result.stdout)["cells"] == 8
    assert matrix.read_text(encoding="utf-8").startswith("row,col,value\n")


def test_mixing_csv_header() -> None:
    runner = CliRunner()

    result = runner.invoke(
        entrypoint.cli,
        ["mixing", "--lags", "3", "--cells", "64", "--digit-cap", "10", "--output", "csv"],
    )
    lines = result.stdout.splitlines()

    assert result.exit_code == 0
    assert lines[0] == "m,formula_id,lag,psi_hat,pairs_evaluated,argmax_i,argmax_j,method"
    assert len(lines) == 4
    assert lines[1].endswith(",exact")


def test_invariant_check() -> None:
    runner = CliRunner()

    result = runner.invoke(
        entrypoint.cli, ["invariant-check", "--grid", "50", "--intervals", "10"]
    )
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["fixed_point_ok"] is True
    assert record["pushforward_ok"] is True


def test_experiment_summary() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["experiment", "khinchine", *_SMALL_EXPERIMENT])
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["formula_id"] == "khinchine"
    assert record["experiment"] == "khinchine"
    assert record["config"]["trials"] == 6
    assert set(record) >= {"targets", "estimates", "bounds"}


def test_experiment_output_is_reproducible() -> None:
    runner = CliRunner()
    args = ["experiment", "khinchine", *_SMALL_EXPERIMENT]

    first = runner.invoke(entrypoint.cli, args)
    second = runner.invoke(entrypoint.cli, args)

    assert first.exit_code == 0
    assert first.stdout == second.stdout


def test_experiment_csv_does_not_depend_on_threads() -> None:
    runner = CliRunner()
    args = ["experiment", "max-digit", *_SMALL_EXPERIMENT, "--output", "csv"]

    single = runner.invoke(entrypoint.cli, [*args, "--threads", "1"])
    parallel = runner.invoke(entrypoint.cli, [*args, "--threads", "2"])

    assert single.exit_code == 0
    assert single.stdout.splitlines()[0] == (
        "m,formula_id,trial,n,S_n,L_n,trimmed,truncated_S,remainder_R,level,"
        "exceedance_count,normed,block_max_normed,starred_S,short"
    )
    assert single.stdout.splitlines()[1].startswith("2,max_digit,0,")
    assert len(single.stdout.splitlines()) == 7
    assert parallel.stdout == single.stdout


def test_experiment_csv_reports_its_settings(tmp_path: Path) -> None:
    runner = CliRunner()
    args = ["experiment", "khinchine", *_SMALL_EXPERIMENT, "--output", "csv"]
    out = tmp_path / "trials.csv"

    echoed = runner.invoke(entrypoint.cli, args)
    written = runner.invoke(entrypoint.cli, [*args, "--out", str(out)])

    assert echoed.exit_code == 0
    (line,) = [line for line in echoed.stderr.splitlines() if line.startswith("{")]
    settings = json.loads(line)
    assert settings["formula_id"] == "config"
    assert settings["config"]["seed"] == 42
    assert settings["config"]["trials"] == 6
    assert written.exit_code == 0
    assert out.read_text(encoding="utf-8").startswith("m,formula_id,trial,")
    sidecar = json.loads((tmp_path / "trials.config.json").read_text(encoding="utf-8"))
    assert sidecar == settings


def test_experiment_threads_from_environment() -> None:
    runner = CliRunner()

    result = runner.invoke(
        entrypoint.cli,
        ["experiment", "philipp", *_SMALL_EXPERIMENT],
        env={"THETA_EXPANSIONS_THREADS": "2"},
    )

    assert result.exit_code == 0
    assert json.loads(result.stdout)["config"]["threads"] == 2


def test_experiment_config_file(tmp_path: Path) -> None:
    runner = CliRunner()
    config = tmp_path / "experiment.yaml"
    config.write_text("n: 500\ntrials: 3\ncheckpoints: [100]\n", encoding="utf-8")
    series = tmp_path / "series.csv"

    result = runner.invoke(
        entrypoint.cli,
        [
            "experiment",
            "diamond-vaaler",
            "--config",
            str(config),
            "--trials",
            "2",
            "--points-per-decade",
            "4",
            "--series-out",
            str(series),
        ],
    )
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["config"]["n"] == 500
    assert record["config"]["trials"] == 2
    assert record["config"]["checkpoints"] == [100, 500]
    assert series.read_text(encoding="utf-8").startswith(
        "m,formula_id,trial,k,ratio,trimmed_ratio\n"
    )


def test_experiment_rejects_unknown_config_keys(tmp_path: Path) -> None:
    runner = CliRunner()
    config = tmp_path / "experiment.yaml"
    config.write_text("trails: 3\n", encoding="utf-8")

    result = runner.invoke(entrypoint.cli, ["experiment", "khinchine", "--config", str(config)])

    assert result.exit_code == 1
    assert '"error": "config"' in result.output


def test_experiment_all() -> None:
    runner = CliRunner()

    result = runner.invoke(entrypoint.cli, ["experiment", "all", *_SMALL_EXPERIMENT])
    record = json.loads(result.stdout)

    assert result.exit_code == 0
    assert record["formula_id"] == "all"
    assert list(record["experiments"]) == ["khinchine", "diamond_vaaler", "max_digit", "philipp"]


def test_run_returns_exit_codes(capsys: pytest.CaptureFixture[str]) -> None:
    assert entrypoint.run(["measure", "mean"]) == 0
    assert json.loads(capsys.readouterr().out)["formula_id"] == "mean"
    assert entrypoint.run(["measure", "digit", "--i", "1"]) == 1
    assert entrypoint.run(["expand"]) == 2
