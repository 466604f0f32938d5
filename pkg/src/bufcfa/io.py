"""Data ingestion and result serialization.

Correlation files: optional comment lines (``#``), an ``n: <int>`` header
line (optional when the caller supplies n), then p rows of p whitespace- or
comma-delimited decimals.  Raw data files: a header row of variable names,
then one delimited row per observation.

Results are written as JSON with full float precision (17 significant
digits), so re-reading reproduces every value bit-for-bit; simulation
summaries additionally go to a delimited table with a fixed column order.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError
from .estimation import SampleMoments
from .fit_indices import FitReport
from .model import CellRole, LoadingPattern, Solution
from .procedures import ProcedureTrace
from .simulation import CellSummary, RepRecord

SUMMARY_COLUMNS = [f.name for f in dataclasses.fields(CellSummary)]
RECORD_COLUMNS = [f.name for f in dataclasses.fields(RepRecord)]


def _split_cells(line: str) -> list[str]:
    return line.replace(",", " ").split()


def read_correlation_matrix(path, n: Optional[int] = None) -> SampleMoments:
    """Read a square correlation/covariance matrix plus its n declaration.

    ``n`` overrides any header declaration; if neither is present the file
    is rejected.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows: list[list[float]] = []
    declared_n: Optional[int] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("n"):
            head, _, value = line.partition(":")
            if head.strip().lower() == "n":
                try:
                    declared_n = int(value.strip())
                except ValueError:
                    raise InputError(f"{path}:{lineno}: malformed n declaration {line!r}") from None
                continue
        try:
            rows.append([float(x) for x in _split_cells(line)])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric matrix entry in {line!r}") from None
    if not rows:
        raise InputError(f"{path}: no matrix rows found")
    p = len(rows)
    if any(len(r) != p for r in rows):
        widths = sorted({len(r) for r in rows})
        raise InputError(f"{path}: matrix is not square ({p} rows, widths {widths})")
    S = np.array(rows)
    asym = float(np.max(np.abs(S - S.T)))
    if asym > 1e-8:
        raise InputError(f"{path}: matrix asymmetric beyond tolerance ({asym:.2e})")
    S = (S + S.T) / 2.0
    effective_n = n if n is not None else declared_n
    if effective_n is None:
        raise InputError(f"{path}: sample size missing (no 'n:' header and no --n)")
    try:
        return SampleMoments(S, n=effective_n)
    except Exception as exc:
        raise InputError(f"{path}: {exc}") from exc


def read_raw_data(path) -> SampleMoments:
    """Read delimited observations (header of names, one row per case)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    lines = [
        stripped
        for raw in text.splitlines()
        if (stripped := raw.split("#", 1)[0].strip())
    ]
    if len(lines) < 2:
        raise InputError(f"{path}: need a header line plus data rows")
    names = tuple(_split_cells(lines[0]))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = _split_cells(line)
        if len(cells) != len(names):
            raise InputError(
                f"{path}:{lineno}: row has {len(cells)} values, expected {len(names)}"
            )
        try:
            rows.append([float(x) for x in cells])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric data entry") from None
    data = np.array(rows)
    if data.shape[0] <= data.shape[1]:
        raise InputError(f"{path}: need more observations than variables")
    R = np.corrcoef(data, rowvar=False)
    R = (R + R.T) / 2.0
    try:
        return SampleMoments(R, n=data.shape[0], names=names)
    except Exception as exc:
        raise InputError(f"{path}: {exc}") from exc


def write_raw_data(path, data: np.ndarray, names) -> None:
    """Inverse of :func:`read_raw_data` at full precision."""
    data = np.asarray(data, dtype=float)
    lines = [" ".join(names)]
    for row in data:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _array(a) -> list:
    return np.asarray(a).tolist()


def _solution_dict(s: Solution) -> dict:
    return {
        "lambda": _array(s.lambda_hat),
        "phi": _array(s.phi_hat),
        "psi": _array(s.psi_hat),
        "f_min": s.f_min,
        "n_iterations": s.n_iterations,
        "converged": s.converged,
        "constraint_residuals": _array(s.constraint_residuals),
        "gradient_norm": s.gradient_norm,
    }


def _report_dict(r: FitReport) -> dict:
    return dataclasses.asdict(r)


def _pattern_dict(pattern: LoadingPattern) -> dict:
    return {
        "p": pattern.p,
        "q": pattern.q,
        "cells": [[cell.value for cell in row] for row in pattern.cells],
    }


def pattern_from_dict(d: dict) -> LoadingPattern:
    cells = np.array(
        [[CellRole(value) for value in row] for row in d["cells"]], dtype=object
    )
    return LoadingPattern(cells)


def trace_to_dict(trace: ProcedureTrace) -> dict:
    return {
        "kind": "procedure_trace",
        "procedure": trace.procedure,
        "converged": trace.converged,
        "quality_index": trace.quality_index,
        "pattern": _pattern_dict(trace.pattern),
        "mi_table": [list(row) for row in trace.mi_table] if trace.mi_table else None,
        "steps": [
            {
                "label": step.label,
                "solution": _solution_dict(step.solution),
                "report": _report_dict(step.report),
                "weights": _array(step.weights) if step.weights is not None else None,
                "weight_gap": step.weight_gap,
            }
            for step in trace.steps
        ],
    }


def summaries_to_dict(summaries: list[CellSummary], records: list[RepRecord]) -> dict:
    return {
        "kind": "grid_summary",
        "columns": SUMMARY_COLUMNS,
        "cells": [dataclasses.asdict(s) for s in summaries],
        "records": [dataclasses.asdict(r) for r in records],
    }


def write_result(payload, path) -> None:
    """Serialize a trace or grid output to JSON at full float precision.

    Grid output is a list of cell summaries or a (summaries, records)
    pair; either also produces ``<path stem>.cells.csv`` and
    ``<path stem>.reps.csv`` tables next to the JSON document.
    """
    path = Path(path)
    summaries = records = None
    if isinstance(payload, ProcedureTrace):
        doc = trace_to_dict(payload)
    elif (
        isinstance(payload, tuple)
        and len(payload) == 2
        and all(isinstance(s, CellSummary) for s in payload[0])
    ):
        summaries, records = list(payload[0]), list(payload[1])
        doc = summaries_to_dict(summaries, records)
    elif isinstance(payload, list) and all(isinstance(s, CellSummary) for s in payload):
        summaries, records = payload, []
        doc = summaries_to_dict(summaries, records)
    else:
        raise InputError(f"cannot serialize object of type {type(payload).__name__}")
    try:
        path.write_text(json.dumps(doc, indent=1))
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
    if summaries is not None:
        write_grid_tables(summaries, records, path)


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_grid_tables(summaries, records, json_path) -> None:
    base = Path(json_path)
    cells_path = base.with_suffix(".cells.csv")
    reps_path = base.with_suffix(".reps.csv")
    with cells_path.open("w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for s in summaries:
            d = dataclasses.asdict(s)
            fh.write(",".join(_csv_value(d[c]) for c in SUMMARY_COLUMNS) + "\n")
    with reps_path.open("w") as fh:
        fh.write(",".join(RECORD_COLUMNS) + "\n")
        for r in records:
            d = dataclasses.asdict(r)
            fh.write(",".join(_csv_value(d[c]) for c in RECORD_COLUMNS) + "\n")


def read_result(path) -> dict:
    """Load a result document written by :func:`write_result`."""
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a valid result document ({exc})") from exc
