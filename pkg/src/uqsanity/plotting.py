"""Charts regenerated from report CSVs.

Every chart is first reduced to a JSON-serializable description (the data
drawn, axis labels, chart kind); rendering only reads that description.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

from .checkpoint import atomic_write_text
from .sanity import CSV_COLUMNS


class ReportSchemaError(ValueError):
    pass


def parse_report_csv(fh) -> list[dict]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ReportSchemaError("empty report CSV") from None
    if header != CSV_COLUMNS:
        raise ReportSchemaError(f"unexpected columns {header}; expected {CSV_COLUMNS}")
    rows = []
    for k, r in enumerate(reader):
        if len(r) != len(CSV_COLUMNS):
            raise ReportSchemaError(f"row {k} has {len(r)} cells")
        rows.append(dict(zip(CSV_COLUMNS, r)))
    if not rows:
        raise ReportSchemaError("report CSV has no data rows")
    return rows


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return parse_report_csv(fh)


def _is_stage(label: str) -> bool:
    try:
        float(label)
        return True
    except ValueError:
        return False


def describe_report(rows: list[dict]) -> dict:
    """Chart description: line chart for weight tests, bar chart for data tests."""
    first = rows[0]
    verdict = next((r["metric_value"] for r in rows if r["metric_name"] == "verdict"), "")
    title = f"{first['uq']} + {first['explainer']} on {first['dataset'] or 'data'} ({first['test']} test)"
    if first["test"] == "weight":
        stage_rows = [r for r in rows if _is_stage(r["stage_fraction"])]
        names = [n for n in ("mean_ssim", "std_ssim", "aggregate_sigma")
                 if any(r["metric_name"] == n for r in stage_rows)]
        # images are judged on SSIM; sigma is only a diagnostic there
        if "mean_ssim" in names:
            names = ["mean_ssim", "std_ssim"]
        if not names:
            raise ReportSchemaError("weight-test CSV has no per-stage metrics")
        xs = sorted({float(r["stage_fraction"]) for r in stage_rows})
        series = []
        for n in names:
            by_x = {float(r["stage_fraction"]): float(r["metric_value"])
                    for r in stage_rows if r["metric_name"] == n}
            series.append({"label": n, "x": xs, "y": [by_x[x] for x in xs]})
        return {"kind": "line", "title": title, "xlabel": "fraction of layers randomized",
                "ylabel": "SSIM vs stage 0" if "mean_ssim" in names else "aggregate explanation sigma",
                "series": series, "verdict": verdict}
    if first["test"] == "data":
        values = {r["metric_name"]: float(r["metric_value"]) for r in rows
                  if r["metric_name"] in ("sigma_true", "sigma_random", "mean_ssim", "std_ssim")}
        if "mean_ssim" in values:
            bars = [("mean map SSIM", values["mean_ssim"]), ("std map SSIM", values["std_ssim"])]
            ylabel = "SSIM true vs random labels"
        elif {"sigma_true", "sigma_random"} <= set(values):
            bars = [("true labels", values["sigma_true"]), ("random labels", values["sigma_random"])]
            ylabel = "aggregate explanation sigma"
        else:
            raise ReportSchemaError("data-test CSV lacks sigma or SSIM metrics")
        return {"kind": "bar", "title": title, "ylabel": ylabel,
                "bars": [{"label": k, "value": v} for k, v in bars], "verdict": verdict}
    raise ReportSchemaError(f"unknown test kind {first['test']!r}")


def render(desc: dict, path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    if desc["kind"] == "line":
        for s in desc["series"]:
            ax.plot(s["x"], s["y"], marker="o", label=s["label"])
        ax.set_xlabel(desc["xlabel"])
        ax.legend()
    else:
        labels = [b["label"] for b in desc["bars"]]
        ax.bar(labels, [b["value"] for b in desc["bars"]], color=["tab:blue", "tab:orange"])
    ax.set_ylabel(desc["ylabel"])
    ax.set_title(f"{desc['title']}\nverdict: {desc['verdict']}", fontsize=9)
    fig.tight_layout()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{path.suffix}")
    fig.savefig(tmp)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def plot_reports(csv_paths, out_dir, fmt: str = "png") -> list[Path]:
    """One description (JSON) plus one image per report CSV."""
    out_dir = Path(out_dir)
    descs = [(Path(p), describe_report(read_report(p))) for p in csv_paths]
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for p, desc in descs:
        atomic_write_text(out_dir / f"{p.stem}.plot.json", json.dumps(desc, indent=2, sort_keys=True) + "\n")
        written.append(render(desc, out_dir / f"{p.stem}.{fmt}"))
    return written
