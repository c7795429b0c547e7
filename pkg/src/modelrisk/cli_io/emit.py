"""Report and summary files: per-date CSV, wide summary CSV, JSON with run metadata."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import math
from pathlib import Path

from ..errors import ParseError
from ..risk_engine import ALL_BUCKET, QUANTITIES, STATISTICS, Gap, RiskReport, StatsTable

REPORT_COLUMNS = tuple(f.name for f in dataclasses.fields(RiskReport))
GAP_COLUMNS = tuple(f.name for f in dataclasses.fields(Gap))
_FLOATS = ("tau", "eta1", "eta2", "eta3", "eta3_hat", "residual", "cov_m1_m2", "cov_m1_m2logm2")

REPORTS_FILE = "reports.csv"
GAPS_FILE = "gaps.csv"
SUMMARY_CSV = "summary.csv"
SUMMARY_JSON = "summary.json"

CONVENTIONS = {
    "quantiles": "linear interpolation between order statistics",
    "non_recal_eta1": "D(Q_hat || P_stale), Q_hat the reference measure closest to the stale model",
    "first_date_eta3_hat": "equals eta1 (no earlier calibration to be stale against)",
    "heston_stale_state": "stale model uses today's calibrated variance state",
}


def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dt.date):
        return value.isoformat()
    return value


def write_reports_csv(reports, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([_cell(getattr(r, c)) for c in REPORT_COLUMNS])


def write_gaps_csv(gaps, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAP_COLUMNS)
        for g in gaps:
            w.writerow([_cell(getattr(g, c)) for c in GAP_COLUMNS])


def read_reports_csv(path):
    """Inverse of write_reports_csv."""
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ParseError(f"{path}: not a report file")
        for row in reader:
            try:
                vals = dict(row)
                vals["date"] = dt.date.fromisoformat(row["date"])
                vals["expiry"] = dt.date.fromisoformat(row["expiry"])
                for c in _FLOATS:
                    vals[c] = float(row[c])
                vals["recalibrated"] = bool(int(row["recalibrated"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{reader.line_num}: {exc}") from exc
            out.append(RiskReport(**vals))
    return out


def summary_columns(table):
    return [(m, f) for m in table.models for f in table.frequencies]


def write_summary_csv(table, path):
    """One row per (bucket, quantity, statistic), one column per (model, frequency)."""
    cols = summary_columns(table) if table is not None else []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "quantity", "statistic"] + [f"{m}_{f}" for m, f in cols])
        if table is None:
            return
        for bucket in table.buckets:
            for qname in QUANTITIES:
                for stat in STATISTICS:
                    vals = [table.get(m, f, bucket, qname, stat) for m, f in cols]
                    if all(math.isnan(v) for v in vals):
                        continue
                    w.writerow([bucket, qname, stat] + ["" if math.isnan(v) else repr(v) for v in vals])


def _nested(table):
    out = {}
    for m, f in summary_columns(table):
        for bucket in table.buckets:
            for qname in QUANTITIES:
                vals = {s: table.get(m, f, bucket, qname, s) for s in STATISTICS}
                if all(math.isnan(v) for v in vals.values()):
                    continue
                node = out.setdefault(m, {}).setdefault(f, {}).setdefault(bucket, {})
                node[qname] = {s: (None if math.isnan(v) else v) for s, v in vals.items()}
    return out


def write_summary_json(table, path, metadata):
    doc = {"metadata": metadata, "tables": _nested(table) if table is not None else {}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def emit_reports(reports, table: StatsTable | None, out_dir, gaps=(), metadata=None):
    """Write the four output files into ``out_dir``; returns their paths.

    ``table`` may be None (no reports), giving header-only CSVs and an empty
    summary. Nothing here depends on time or ordering of dict insertion, so
    identical inputs give identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(CONVENTIONS)
    meta.update(metadata or {})
    meta.update({"n_reports": len(reports), "n_gaps": len(gaps), "all_bucket": ALL_BUCKET})
    paths = {
        "reports": out / REPORTS_FILE,
        "gaps": out / GAPS_FILE,
        "summary_csv": out / SUMMARY_CSV,
        "summary_json": out / SUMMARY_JSON,
    }
    write_reports_csv(reports, paths["reports"])
    write_gaps_csv(gaps, paths["gaps"])
    write_summary_csv(table, paths["summary_csv"])
    write_summary_json(table, paths["summary_json"], meta)
    return paths
