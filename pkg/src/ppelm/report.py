"""Run reports: delimited output, raw-sample sidecars, and the sweep figure."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

REPORT_COLUMNS = [
    "dataset",
    "k",
    "L",
    "seed",
    "wall_time_total",
    "wall_time_protocol",
    "wall_time_solve",
    "train_accuracy_secure",
    "train_accuracy_plain",
    "train_accuracy_float",
    "models_identical",
]


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return value


def write_report_csv(rows: list, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({col: _cell(row.get(col)) for col in REPORT_COLUMNS})
    return path


def read_report_csv(path) -> list:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_samples_json(samples: dict, path) -> Path:
    """Raw per-repetition timings next to the median that went into the CSV."""
    path = Path(path)
    path.write_text(json.dumps(samples, indent=2, sort_keys=True) + "\n")
    return path


def render_sweep_figure(rows: list, path, title: str = None) -> Path:
    """Training time against party count, rendered next to the CSV."""
    ks = [int(r["k"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for column, label in (("wall_time_total", "total"),
                          ("wall_time_protocol", "ring protocol"),
                          ("wall_time_solve", "solve")):
        values = [r.get(column) for r in rows]
        if any(v in (None, "") for v in values):
            continue  # --parallel blanks timings; nothing to plot
        ax.plot(ks, [float(v) for v in values], marker="o", markersize=3.5,
                linewidth=1.2, label=label)
    ax.set_xlabel("parties (k)")
    ax.set_ylabel("wall time (s)")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if ax.lines:
        ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
