"""Report files for an experiment run.

Three files are written into the output directory:

``replications.csv``
    one row per (horizon, replication, estimator) with columns
    ``horizon,replication,estimator,estimate,degenerate,ess,zero_fraction``
    and a trailing ``error`` column that is empty on success.
``summary.csv``
    one row per estimator, then a block of columns per horizon starting
    with ``T{h}_rmse,T{h}_bias,T{h}_sd`` followed by the remaining cell
    diagnostics.  Leading ``# oracle,<T>,<value>,<se>`` lines carry the
    oracle values.
``summary.json``
    the same summary as a JSON document.

Floats are written with ``repr`` so that reading a file back gives the
exact values and identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .experiment import CellSummary, ReplicationRecord, ReplicationSummary

__all__ = [
    "ReportError",
    "REPLICATION_COLUMNS",
    "write_reports",
    "replications_csv",
    "summary_csv",
    "read_replications_csv",
    "read_summary_csv",
    "format_table",
]

REPLICATION_COLUMNS = ("horizon", "replication", "estimator", "estimate", "degenerate", "ess", "zero_fraction", "error")
_CELL_FIELDS = tuple(f.name for f in fields(CellSummary))
_INT_FIELDS = {"n_ok", "n_failed"}


class ReportError(OSError):
    """A report file could not be written or parsed; ``path`` names the file."""

    def __init__(self, path, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = str(path)


def _f(x: float) -> str:
    return repr(float(x))


def replications_csv(records: Sequence[ReplicationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATION_COLUMNS)
    for r in sorted(records, key=lambda r: (r.horizon, r.replication)):
        w.writerow([
            r.horizon, r.replication, r.estimator, _f(r.estimate), int(r.degenerate),
            _f(r.ess), _f(r.zero_fraction), r.error or "",
        ])
    return buf.getvalue()


def summary_csv(summary: ReplicationSummary) -> str:
    buf = io.StringIO()
    for h, (v, se) in sorted(summary.oracle.items()):
        buf.write(f"# oracle,{h},{_f(v)},{_f(se)}\n")
    w = csv.writer(buf, lineterminator="\n")
    horizons = summary.horizons
    w.writerow(["estimator"] + [f"T{h}_{k}" for h in horizons for k in _CELL_FIELDS])
    for est in summary.estimators:
        row = [est]
        for h in horizons:
            c = summary.cells.get((h, est))
            for k in _CELL_FIELDS:
                if c is None:
                    row.append("")
                elif k in _INT_FIELDS:
                    row.append(str(getattr(c, k)))
                else:
                    row.append(_f(getattr(c, k)))
        w.writerow(row)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(path, exc.strerror or str(exc)) from None


def write_reports(
    summary: ReplicationSummary,
    records: Sequence[ReplicationRecord],
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write the three report files into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(out, exc.strerror or str(exc)) from None
    paths = {
        "replications": out / "replications.csv",
        "summary_csv": out / "summary.csv",
        "summary_json": out / "summary.json",
    }
    _write(paths["replications"], replications_csv(records))
    _write(paths["summary_csv"], summary_csv(summary))
    _write(paths["summary_json"], json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def _open(path):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise ReportError(path, exc.strerror or str(exc)) from None


def read_replications_csv(path: str | Path) -> list[ReplicationRecord]:
    with _open(path) as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPLICATION_COLUMNS:
            raise ReportError(path, f"unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(ReplicationRecord(
                int(row["horizon"]), int(row["replication"]), row["estimator"], float(row["estimate"]),
                bool(int(row["degenerate"])), float(row["ess"]), float(row["zero_fraction"]),
                row["error"] or None,
            ))
    return out


def read_summary_csv(path: str | Path) -> ReplicationSummary:
    oracle: dict[int, tuple[float, float]] = {}
    body = []
    with _open(path) as fh:
        for line in fh:
            if line.startswith("# oracle,"):
                _, h, v, se = line.strip().split(",")
                oracle[int(h)] = (float(v), float(se))
            elif not line.startswith("#"):
                body.append(line)
    rows = list(csv.reader(body))
    if not rows or rows[0][0] != "estimator":
        raise ReportError(path, "missing header row")
    header = rows[0]
    cells = {}
    for row in rows[1:]:
        est = row[0]
        per_h: dict[int, dict] = {}
        for name, val in zip(header[1:], row[1:]):
            tag, key = name.split("_", 1)
            if val == "":
                continue
            per_h.setdefault(int(tag[1:]), {})[key] = int(val) if key in _INT_FIELDS else float(val)
        for h, kw in per_h.items():
            cells[(h, est)] = CellSummary(**kw)
    return ReplicationSummary(oracle, cells)


def format_table(summary: ReplicationSummary) -> str:
    """Plain-text RMSE / Bias / SD table for the console."""
    horizons = summary.horizons
    width = max([len(e) for e in summary.estimators] + [9])
    head = " " * width + "".join(f" | {'T=' + str(h):^26}" for h in horizons)
    sub = f"{'estimator':<{width}}" + " | {:>8} {:>8} {:>8}".format("RMSE", "Bias", "SD") * len(horizons)
    lines = [head, sub, "-" * len(sub)]
    for est in summary.estimators:
        parts = [f"{est:<{width}}"]
        for h in horizons:
            c = summary.cells[(h, est)]
            mark = "*" if c.n_failed else " "
            parts.append(" | " + " ".join(_num(x) for x in (c.rmse, c.bias, c.sd)) + mark)
        lines.append("".join(parts))
    lines.append("oracle: " + ", ".join(f"T={h}: {v:.4f} ± {se:.4f}" for h, (v, se) in sorted(summary.oracle.items())))
    if any(c.n_failed for c in summary.cells.values()):
        lines.append("* cell has failed replications (excluded from the statistics)")
    return "\n".join(lines)


def _num(x: float) -> str:
    if not math.isfinite(x):
        return f"{'nan':>8}"
    return f"{x:8.2f}" if abs(x) < 1e6 else f"{x:8.1e}"
