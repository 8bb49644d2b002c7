#!/usr/bin/env python3
"""
Report artifacts: heatmap tables, confusion matrices, charts and design tables.
"""

from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from core.exceptions import EvaluationError  # noqa: E402
from core.logger import app_logger  # noqa: E402
from tools.clipstore import Clip  # noqa: E402
from tools.designer import RUN_ORIG, RUN_ZERO, build_l18, l18_table, runs_document, verify_orthogonality  # noqa: E402
from tools.evaluator import (  # noqa: E402
    METRIC_LABELS, METRIC_NAMES, FoldReport, RunSummary, best_run, best_run_per_metric,
    format_mean_sd, mean_normalized_confusion, normalize_confusion, sort_reports, summary_table,
)
from utils.io_utils import atomic_write_bytes, write_json  # noqa: E402

# Stable SVG element ids across runs
plt.rcParams["svg.hashsalt"] = "tackle-report"
_SVG_METADATA = {"Date": None}


def _write_text(path: Path, text: str) -> Path:
    atomic_write_bytes(path, text.encode("utf-8"))
    return path


def write_heatmap_csv(summaries: Mapping[str, RunSummary], path: Path, statistic: str = "mean") -> Path:
    """Metrics x runs table of fold means (or SDs)."""
    table = summary_table(summaries, statistic)
    return _write_text(Path(path), table.to_csv(float_format="%.4f", index_label="metric"))


def write_summary_csv(summaries: Mapping[str, RunSummary], path: Path) -> Path:
    """Runs x metrics table of "mean±sd" strings."""
    rows = ["run," + ",".join(METRIC_NAMES)]
    for run_id, summary in summaries.items():
        if summary.folds == 0:
            continue
        cells = [format_mean_sd(summary.mean[m], summary.sd[m]) for m in METRIC_NAMES]
        rows.append(",".join([run_id] + cells))
    return _write_text(Path(path), "\n".join(rows) + "\n")


def confusion_document(reports: Iterable[FoldReport]) -> dict:
    """Per run: mean class-normalized confusion plus each fold's matrix."""
    grouped: dict[str, list[FoldReport]] = {}
    for report in sort_reports(reports):
        if report.ok:
            grouped.setdefault(report.run_id, []).append(report)
    doc = {}
    for run_id, run_reports in grouped.items():
        doc[run_id] = {
            "rows": ["Risky", "Safe"],
            "columns": ["Risky", "Safe"],
            "mean_percent": np.round(mean_normalized_confusion(run_reports), 4).tolist(),
            "folds": {
                str(r.fold): np.round(normalize_confusion(r.counts), 4).tolist() for r in run_reports
            },
        }
    return doc


def write_heatmap_svg(summaries: Mapping[str, RunSummary], path: Path) -> Path:
    """Annotated metrics x runs heatmap; the best run per metric is boxed."""
    table = summary_table(summaries)
    best = best_run_per_metric(summaries)
    runs = list(table.columns)

    fig, ax = plt.subplots(figsize=(max(6.0, 0.75 * len(runs) + 2.0), 4.2))
    image = ax.imshow(table.values, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(runs)), labels=runs, rotation=60, ha="right", fontsize=8)
    ax.set_yticks(range(len(METRIC_NAMES)), labels=[METRIC_LABELS[m] for m in METRIC_NAMES], fontsize=8)
    for i, metric in enumerate(METRIC_NAMES):
        for j, run_id in enumerate(runs):
            value = table.iloc[i, j]
            ax.text(j, i, f"{value:.2f}", ha="center", va="center", fontsize=6,
                    color="black" if value > 0.6 else "white")
        if metric in best:
            j = runs.index(best[metric])
            ax.add_patch(Rectangle((j - 0.5, i - 0.5), 1, 1, fill=False, edgecolor="red", linewidth=1.5))
    fig.colorbar(image, ax=ax, fraction=0.025)
    ax.set_title("Mean metric over folds")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    return Path(path)


def write_comparison_svg(summaries: Mapping[str, RunSummary], path: Path) -> Optional[Path]:
    """Bar chart of both baselines against the best run, with fold SD error bars."""
    runs = [r for r in (RUN_ORIG, RUN_ZERO) if r in summaries and summaries[r].folds > 0]
    try:
        top = best_run(summaries)
    except EvaluationError:
        return None
    if top not in runs:
        runs.append(top)

    x = np.arange(len(METRIC_NAMES))
    width = 0.8 / len(runs)
    fig, ax = plt.subplots(figsize=(8.0, 3.6))
    for k, run_id in enumerate(runs):
        s = summaries[run_id]
        ax.bar(x + k * width, [s.mean[m] for m in METRIC_NAMES], width,
               yerr=[s.sd[m] for m in METRIC_NAMES], capsize=2, label=run_id)
    ax.set_xticks(x + width * (len(runs) - 1) / 2, labels=[METRIC_LABELS[m] for m in METRIC_NAMES], fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    return Path(path)


def write_preview_png(original: Clip, augmented: Clip, frame_index: int, path: Path,
                      title: str = "") -> Path:
    """Original and augmented frame side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(6.0, 3.2))
    for ax, clip, name in zip(axes, (original, augmented), ("Original", "Augmented")):
        ax.imshow(clip.frames[frame_index])
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=120)
    plt.close(fig)
    return Path(path)


def write_design(out_dir: Path) -> list[Path]:
    """L18 table, run grid and orthogonality report."""
    out_dir = Path(out_dir)
    array = build_l18()
    paths = [
        _write_text(out_dir / "l18.csv", l18_table(array).to_csv(index=False)),
        out_dir / "runs.json",
        out_dir / "orthogonality.json",
    ]
    write_json(paths[1], runs_document())
    write_json(paths[2], verify_orthogonality(array).to_dict())
    return paths


def write_report(reports: Sequence[FoldReport], summaries: Mapping[str, RunSummary], out_dir: Path,
                 write_svg: bool = True) -> list[Path]:
    """Every report artifact for a finished grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        write_heatmap_csv(summaries, out_dir / "heatmap.csv"),
        write_heatmap_csv(summaries, out_dir / "heatmap_sd.csv", statistic="sd"),
        write_summary_csv(summaries, out_dir / "summary.csv"),
    ]
    confusion_path = out_dir / "confusion.json"
    write_json(confusion_path, confusion_document(reports))
    paths.append(confusion_path)

    if write_svg and any(s.folds > 0 for s in summaries.values()):
        paths.append(write_heatmap_svg(summaries, out_dir / "heatmap.svg"))
        comparison = write_comparison_svg(summaries, out_dir / "comparison.svg")
        if comparison is not None:
            paths.append(comparison)
    app_logger.info(f"Wrote {len(paths)} report files to {out_dir}")
    return paths
