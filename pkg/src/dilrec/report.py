"""Deterministic serialization of metric reports (JSON, TSV).

The JSON writer is hand-rolled so two identical runs produce byte-identical
files: fixed key order, metric floats always printed with 6 fractional
digits. Stored metric values already carry exactly 6 decimals, so parsing a
written report reproduces the in-memory one.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

from .errors import DataError
from .evaluation import MetricsReport


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def report_to_json(report: MetricsReport) -> str:
    run = report.run
    parts = [
        "{\n",
        '  "run": {"strategy": %s, "seed": %d, "config_hash": %s},\n'
        % (json.dumps(run["strategy"]), int(run["seed"]), json.dumps(run["config_hash"])),
        '  "periods": [\n',
    ]
    rows = []
    for p in report.periods:
        rows.append(
            '    {"index": %d, "recall": %s, "ndcg": %s, '
            '"users_evaluated": %d, "unseen_users": %d, "unseen_items": %d}'
            % (
                p["index"],
                _fmt(p["recall"]),
                _fmt(p["ndcg"]),
                p["users_evaluated"],
                p["unseen_users"],
                p["unseen_items"],
            )
        )
    parts.append(",\n".join(rows))
    parts.append("\n  ],\n")
    parts.append(
        '  "aggregate": {"recall": %s, "ndcg": %s}\n'
        % (_fmt(report.aggregate["recall"]), _fmt(report.aggregate["ndcg"]))
    )
    parts.append("}\n")
    return "".join(parts)


def write_report(report: MetricsReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_to_json(report))


def parse_report_json(text: str) -> MetricsReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid report JSON: {exc}") from None
    for key in ("run", "periods", "aggregate"):
        if key not in doc:
            raise DataError(f"report JSON missing '{key}'")
    return MetricsReport(run=doc["run"], periods=doc["periods"], aggregate=doc["aggregate"])


def load_report(path: str | os.PathLike) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_report_json(fh.read())


def metrics_tsv_lines(reports: Sequence[MetricsReport]) -> list[str]:
    """Flat (period, strategy, metric, value) rows for plotting tools."""
    lines = ["period\tstrategy\tmetric\tvalue\n"]
    for report in reports:
        strategy = report.run["strategy"]
        for p in report.periods:
            lines.append(f"{p['index']}\t{strategy}\trecall\t{_fmt(p['recall'])}\n")
            lines.append(f"{p['index']}\t{strategy}\tndcg\t{_fmt(p['ndcg'])}\n")
    return lines


def write_metrics_tsv(reports: Sequence[MetricsReport], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(metrics_tsv_lines(reports))


def export_metrics(report: MetricsReport, directory: str | os.PathLike) -> tuple[str, str]:
    """Write ``report.json`` and the plotting TSV into a directory."""
    os.makedirs(directory, exist_ok=True)
    json_path = os.path.join(directory, "report.json")
    tsv_path = os.path.join(directory, "metrics.tsv")
    write_report(report, json_path)
    write_metrics_tsv([report], tsv_path)
    return json_path, tsv_path
