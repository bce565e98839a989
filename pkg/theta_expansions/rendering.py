from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from fractions import Fraction
from typing import Any

import numpy as np
from rich.table import Table

from theta_expansions.models import MixingEstimate, UlamOperator
from theta_expansions.qfield import QuadNumber

DENSITY_COLUMNS = ("m", "formula_id", "cell_midpoint", "density", "exact_density")
PSI_COLUMNS = (
    "m",
    "formula_id",
    "lag",
    "psi_hat",
    "pairs_evaluated",
    "argmax_i",
    "argmax_j",
    "method",
)
COORDINATE_COLUMNS = ("row", "col", "value")
DIGIT_COLUMNS = ("m", "formula_id", "index", "digit")


def to_jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(item) for item in value.tolist()]
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, (QuadNumber, Fraction)):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def render_json(record: Mapping[str, Any]) -> str:
    """One-line JSON with keys in insertion order."""
    return json.dumps(to_jsonable(record), ensure_ascii=False)


def render_csv(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(
        buffer, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n"
    )
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _csv_cell(value) for key, value in row.items()})
    return buffer.getvalue()


def _csv_cell(value: Any) -> Any:
    if isinstance(value, float):
        return "" if not math.isfinite(value) else repr(value)
    if isinstance(value, (QuadNumber, Fraction)):
        return str(value)
    if value is None:
        return ""
    return value


def tag(record: Mapping[str, Any], *, m: int, formula_id: str) -> dict[str, Any]:
    """Prefix a record with the parameter and the formula that produced it."""
    return {"m": m, "formula_id": formula_id, **record}


def density_rows(
    op: UlamOperator, density: np.ndarray, exact: np.ndarray
) -> list[dict[str, Any]]:
    return [
        {
            "m": op.m,
            "formula_id": "ulam_density",
            "cell_midpoint": float(mid),
            "density": float(value),
            "exact_density": float(reference),
        }
        for mid, value, reference in zip(op.midpoints, density, exact)
    ]


def psi_rows(m: int, estimates: Sequence[MixingEstimate]) -> list[dict[str, Any]]:
    return [
        {
            "m": m,
            "formula_id": "psi_hat",
            "lag": estimate.lag,
            "psi_hat": estimate.psi_hat,
            "pairs_evaluated": estimate.pairs_evaluated,
            "argmax_i": estimate.argmax[0],
            "argmax_j": estimate.argmax[1],
            "method": estimate.method,
        }
        for estimate in estimates
    ]


def coordinate_text(entries: Iterable[tuple[int, int, float]]) -> str:
    return render_csv(
        COORDINATE_COLUMNS,
        ({"row": row, "col": col, "value": value} for row, col, value in entries),
    )


def summary_table(title: str, rows: Sequence[Mapping[str, Any]]) -> Table:
    """A rich table of experiment estimates for the terminal."""
    table = Table(title=title)
    if not rows:
        return table
    columns = list(rows[0])
    for column in columns:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*(_table_cell(row.get(column)) for column in columns))
    return table


def _table_cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return "" if value is None else str(value)
