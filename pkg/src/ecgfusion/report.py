"""CSV artifacts and SVG figures for a run directory."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .fusion import LambdaSweep
from .nn.train import History
from .protocol import METRIC_NAMES, CVResult, MetricsReport

matplotlib.rcParams["svg.hashsalt"] = "ecgfusion"


class ReportError(FileNotFoundError):
    pass


def _write(path, header_lines: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def read_csv(path) -> tuple[list[str], list[str], list[list[str]]]:
    """Return (header comment lines, column names, rows)."""
    comments, body = [], []
    with open(path, newline="") as fh:
        for line in fh:
            (comments if line.startswith("#") else body).append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ReportError(f"{path}: no table")
    return [c[1:].strip() for c in comments], rows[0], rows[1:]


# -- writers ---------------------------------------------------------------

def write_metrics_csv(path, result: CVResult | Sequence[MetricsReport], header_lines=()) -> Path:
    folds = result.folds if isinstance(result, CVResult) else list(result)
    names = METRIC_NAMES + ("auc",)
    table = np.array([[r.as_dict()[m] for m in names] for r in folds])
    rows = [[i] + list(v) for i, v in enumerate(table)]
    rows.append(["mean"] + list(table.mean(axis=0)))
    rows.append(["std"] + list(table.std(axis=0)))
    return _write(path, header_lines, ["fold", *names], rows)


def write_confusion_csv(path, confusion: np.ndarray, labels: Sequence, header_lines=()) -> Path:
    rows = [[lab] + list(map(int, row)) for lab, row in zip(labels, confusion)]
    return _write(path, header_lines, ["true\\pred", *map(str, labels)], rows)


def write_roc_csv(path, reports: Sequence[MetricsReport], labels: Sequence, header_lines=()) -> Path:
    rows = []
    for f, rep in enumerate(reports):
        for c, curve in enumerate(rep.roc):
            if curve is None:
                continue
            for x, yv in zip(*curve):
                rows.append([f, labels[c], x, yv])
    return _write(path, header_lines, ["fold", "class", "fpr", "tpr"], rows)


def alpha_histogram(alphas: np.ndarray, bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
    return np.histogram(np.asarray(alphas, dtype=np.float64), bins=bins, range=(0.0, 1.0))


def write_alpha_csv(path, alphas: np.ndarray, bins: int = 10, header_lines=()) -> Path:
    counts, edges = alpha_histogram(alphas, bins)
    rows = [[i, edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)]
    return _write(path, list(header_lines) + [f"mean_alpha={float(np.mean(alphas)):.6f}"],
                  ["bin", "lo", "hi", "count"], rows)


def write_history_csv(path, history: History, header_lines=()) -> Path:
    history.write_csv(path, header_lines)
    return Path(path)


def write_sweep_csv(path, sweep: LambdaSweep, header_lines=()) -> Path:
    return _write(path, list(header_lines) + [f"best_lambda={sweep.best_lambda:g}"],
                  ["lambda", "accuracy"], sweep.rows())


# -- figures ---------------------------------------------------------------

def _figure() -> tuple[Figure, object]:
    fig = Figure(figsize=(5, 4))
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig: Figure, path, description: str) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": description})
    return Path(path)


def learning_curve_figure(csv_path) -> Figure:
    _, cols, rows = read_csv(csv_path)
    data = np.array(rows, dtype=np.float64).reshape(-1, len(cols))
    col = {c: data[:, i] for i, c in enumerate(cols)}
    fig = Figure(figsize=(8, 3.5))
    for j, metric in enumerate(("loss", "acc")):
        ax = fig.add_subplot(1, 2, j + 1)
        ax.plot(col["epoch"], col[f"train_{metric}"], label="train")
        if not np.all(np.isnan(col[f"val_{metric}"])):
            ax.plot(col["epoch"], col[f"val_{metric}"], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric)
        ax.legend()
    return fig


def plot_learning_curves(csv_path, svg_path, description: str = "") -> Path:
    return _save(learning_curve_figure(csv_path), svg_path, description)


def roc_figure(csv_path) -> Figure:
    """One line per (fold, class); the chance diagonal is drawn last."""
    _, _, rows = read_csv(csv_path)
    fig, ax = _figure()
    curves: dict[tuple[str, str], list] = {}
    for fold, cls, x, yv in rows:
        curves.setdefault((fold, cls), []).append((float(x), float(yv)))
    for (fold, cls), pts in curves.items():
        pts = np.array(pts)
        ax.plot(pts[:, 0], pts[:, 1], lw=0.8, alpha=0.7, label=f"{fold}/{cls}")
    ax.plot([0, 1], [0, 1], "k--", lw=0.6)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    return fig


def plot_roc(csv_path, svg_path, description: str = "") -> Path:
    return _save(roc_figure(csv_path), svg_path, description)


def plot_confusion(csv_path, svg_path, description: str = "") -> Path:
    _, cols, rows = read_csv(csv_path)
    labels = cols[1:]
    M = np.array([r[1:] for r in rows], dtype=np.float64)
    fig, ax = _figure()
    im = ax.imshow(M, cmap="Blues")
    fig.colorbar(im, ax=ax)
    ticks = np.arange(len(labels))
    ax.set_xticks(ticks, labels, rotation=90, fontsize=6)
    ax.set_yticks(ticks, labels, fontsize=6)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    return _save(fig, svg_path, description)


def plot_sweep(csv_path, svg_path, description: str = "") -> Path:
    _, _, rows = read_csv(csv_path)
    data = np.array(rows, dtype=np.float64).reshape(-1, 2)
    fig, ax = _figure()
    ax.plot(data[:, 0], data[:, 1], "o-")
    ax.set_xlabel("lambda")
    ax.set_ylabel("accuracy (%)")
    return _save(fig, svg_path, description)


def plot_alpha(csv_path, svg_path, description: str = "") -> Path:
    _, _, rows = read_csv(csv_path)
    data = np.array(rows, dtype=np.float64).reshape(-1, 4)
    fig, ax = _figure()
    ax.bar(data[:, 1], data[:, 3], width=data[:, 2] - data[:, 1], align="edge", edgecolor="k")
    ax.set_xlabel("alpha")
    ax.set_ylabel("count")
    return _save(fig, svg_path, description)


def _summary_table(run_dir: Path) -> list[str]:
    lines = []
    metrics = run_dir / "metrics.csv"
    if metrics.exists():
        _, cols, rows = read_csv(metrics)
        agg = {r[0]: r[1:] for r in rows if r[0] in ("mean", "std")}
        lines.append(f"{'metric':<10} {'mean':>10} {'std':>10}")
        for i, name in enumerate(cols[1:]):
            mean = float(agg["mean"][i]) if "mean" in agg else float("nan")
            std = float(agg["std"][i]) if "std" in agg else float("nan")
            lines.append(f"{name:<10} {mean:>10.2f} {std:>10.2f}")
    sweep = run_dir / "sweep.csv"
    if sweep.exists():
        comments, _, rows = read_csv(sweep)
        lines.append("")
        lines.append(f"{'lambda':<10} {'accuracy':>10}")
        lines.extend(f"{float(lam):<10.2f} {float(acc):>10.2f}" for lam, acc in rows)
        lines.extend(c for c in comments if c.startswith("best_lambda"))
    alpha = run_dir / "alpha_hist.csv"
    if alpha.exists():
        comments, _, _ = read_csv(alpha)
        lines.extend(c for c in comments if c.startswith("mean_alpha"))
    return lines


PLOTTERS = {
    "roc.csv": ("roc.svg", plot_roc),
    "confusion.csv": ("confusion.svg", plot_confusion),
    "sweep.csv": ("sweep.svg", plot_sweep),
    "alpha_hist.csv": ("alpha_hist.svg", plot_alpha),
}


def emit_report(run_dir: str | os.PathLike) -> list[Path]:
    """Render every recognised CSV in ``run_dir`` to SVG and write ``summary.txt``.

    Nothing is recomputed; the figures are drawn from the CSV contents.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"{run_dir}: not a directory")
    inputs = sorted(p for p in run_dir.glob("*.csv")
                    if p.name in PLOTTERS or p.name == "metrics.csv" or p.name.startswith("learning_curve"))
    if not inputs:
        raise ReportError(f"{run_dir}: no metric CSVs to report on")
    written = []
    header = []
    for path in inputs:
        comments, _, _ = read_csv(path)
        header = header or comments[:3]
        description = "; ".join(comments[:3])
        if path.name.startswith("learning_curve"):
            written.append(plot_learning_curves(path, path.with_suffix(".svg"), description))
        elif path.name in PLOTTERS:
            name, plot = PLOTTERS[path.name]
            written.append(plot(path, run_dir / name, description))
    summary = run_dir / "summary.txt"
    summary.write_text("\n".join([f"# {h}" for h in header] + _summary_table(run_dir)) + "\n")
    written.append(summary)
    return written
