"""Render stored reports as CSV or Markdown tables.

EER is shown in percent with 3 decimals and size in MB (1e6 bytes) with 3
decimals; exact byte counts are kept in their own column.
"""
import csv
import io
import json

from .sensitivity import CONFIG_KIND, REPORT_KIND, SensitivityReport

HEADER = ["Quantized layer", "EER (%)", "Model Size (MB)", "Size (bytes)"]


def table_rows(report):
    """(label, eer fraction, size bytes) rows for either report kind."""
    kind = report.get("kind", REPORT_KIND)
    if kind == REPORT_KIND:
        rep = SensitivityReport.from_dict(report)
        out = [("No quantization", rep.baseline_eer, rep.baseline_size)]
        out += [(r.layer, r.eer, r.size_bytes) for r in rep.rows]
        return out
    if kind == CONFIG_KIND:
        return [(r["layer"], r["eer"], r["size_bytes"]) for r in report["rows"]]
    raise ValueError(f"unknown report kind {kind!r}")


def _cells(row):
    label, eer, size = row
    return [label, f"{100.0 * eer:.3f}", f"{size / 1e6:.3f}", str(int(size))]


def to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for row in table_rows(report):
        w.writerow(_cells(row))
    return buf.getvalue()


def to_markdown(report):
    body = [_cells(r) for r in table_rows(report)]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(HEADER)]

    def line(cells):
        parts = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))]
        return "| " + " | ".join(parts) + " |"

    sep = "|" + "|".join("-" * (w + 1) + ("-" if i == 0 else ":") for i, w in enumerate(widths)) + "|"
    return "\n".join([line(HEADER), sep] + [line(r) for r in body]) + "\n"


def render(report, fmt):
    if fmt == "csv":
        return to_csv(report)
    if fmt in ("md", "markdown"):
        return to_markdown(report)
    if fmt in ("json", "json-like"):
        return json.dumps(report, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")
