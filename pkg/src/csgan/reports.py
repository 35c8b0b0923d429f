"""CSV and markdown emitters for metric reports."""

from __future__ import annotations

import csv
import io
import math
from typing import Sequence

from .metrics import MetricReport

_DECIMALS = {"mse": 4, "psnr": 4, "ssim": 4, "lpips": 3}
_HEADERS = {"mse": "MSE", "psnr": "PSNR", "ssim": "SSIM", "lpips": "LPIPS"}
# column order used by the comparison tables
TABLE_ORDER = ("ssim", "mse", "psnr", "lpips")


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def report_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", *report.metrics])
    for row in report.per_image:
        w.writerow([row["image"], *(_num(row[m]) for m in report.metrics)])
    agg = report.aggregate
    w.writerow(["AGGREGATE", *(_num(agg[m]) for m in report.metrics)])
    return buf.getvalue()


def write_report_csv(report: MetricReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(report_csv(report))


def read_report_csv(path: str) -> tuple[list[dict], dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    agg = rows.pop()
    if agg["image"] != "AGGREGATE":
        raise ValueError(f"{path} lacks a final AGGREGATE row")
    return rows, agg


def _fmt(metric: str, v: float) -> str:
    if math.isinf(v):
        return "inf"
    return f"{v:.{_DECIMALS[metric]}f}"


def markdown_table(reports: Sequence[MetricReport]) -> str:
    """One row per method, columns SSIM / MSE / PSNR / LPIPS as available."""
    cols = [m for m in TABLE_ORDER if any(m in r.metrics for r in reports)]
    lines = [
        "| Method | " + " | ".join(_HEADERS[c] for c in cols) + " |",
        "|---" * (len(cols) + 1) + "|",
    ]
    for r in reports:
        agg = r.aggregate
        cells = [_fmt(c, agg[c]) if c in agg else "n/a" for c in cols]
        lines.append(f"| {r.method or '-'} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
