"""Tab-separated summaries and SVG plots of training and evaluation results.

Plots are drawn with matplotlib's object API (no global pyplot state) and written as SVG with a fixed hash salt,
text kept as text and no creation date, so equal inputs give identical files.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Mapping, Sequence, Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .metrics import EvalReport, det_curve
from .training import LossRow

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import CrossTestResult

logger = logging.getLogger(__name__)

SVG_PARAMS = {"svg.hashsalt": "mmdadapt", "svg.fonttype": "none"}

COMPARISON_COLUMNS = (
    "method",
    "inter_hter",
    "inter_far",
    "inter_frr",
    "inter_auc",
    "inter_accuracy",
    "inter_threshold",
    "intra_hter",
    "intra_auc",
    "intra_accuracy",
)
SUMMARY_COLUMNS = ("report", "threshold", "far", "frr", "hter", "auc", "accuracy", "test_videos")


def _save_svg(figure: Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    with matplotlib.rc_context(SVG_PARAMS):
        figure.savefig(path, format="svg", metadata={"Date": None})
    logger.info("wrote plot %s", path)
    return path


def write_comparison(result: CrossTestResult, path: Union[str, Path]) -> Path:
    """One row per method with its inter-test (target) and intra-test (source) results."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for method, outcome in result.methods.items():
            inter, intra = outcome.inter, outcome.intra
            writer.writerow(
                [
                    method,
                    *(f"{value:.6f}" for value in (inter.hter, inter.far, inter.frr, inter.auc, inter.accuracy)),
                    repr(inter.threshold),
                    *(f"{value:.6f}" for value in (intra.hter, intra.auc, intra.accuracy)),
                ]
            )
    return path


def write_summary(reports: Mapping[str, EvalReport], path: Union[str, Path]) -> Path:
    """One row per evaluation report, in the given order."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for name, report in reports.items():
            values = (report.far, report.frr, report.hter, report.auc, report.accuracy)
            test_videos = report.counts.get("test_genuine", 0) + report.counts.get("test_fake", 0)
            writer.writerow([name, repr(report.threshold), *(f"{value:.6f}" for value in values), test_videos])
    return path


def epoch_means(rows: Sequence[LossRow]) -> Dict[str, List[float]]:
    """Per-epoch means of the total, the classification term and every domain term of a loss log."""
    epochs = sorted({row.epoch for row in rows})
    names = [name for name, _ in rows[0].domain] if rows else []
    series: Dict[str, List[float]] = {"total": [], "classification": []}
    series.update({name: [] for name in names})
    for epoch in epochs:
        selected = [row for row in rows if row.epoch == epoch]
        series["total"].append(float(np.mean([row.total for row in selected])))
        series["classification"].append(float(np.mean([row.classification for row in selected])))
        for name in names:
            series[name].append(float(np.mean([dict(row.domain)[name] for row in selected])))
    return series


def plot_loss_curve(rows: Sequence[LossRow], path: Union[str, Path], title: str = "training loss") -> Path:
    series = epoch_means(rows)
    figure = Figure(figsize=(6.0, 4.0))
    axes = figure.add_subplot()
    for name, values in series.items():
        label = name if name in ("total", "classification") else f"mmd {name}"
        axes.plot(range(1, len(values) + 1), values, label=label)
    axes.set_xlabel("epoch")
    axes.set_ylabel("mean loss")
    axes.set_title(title)
    axes.grid(True, alpha=0.3)
    axes.legend(loc="best")
    figure.tight_layout()
    return _save_svg(figure, path)


def plot_far_frr(report: EvalReport, path: Union[str, Path], title: str = "FAR / FRR") -> Path:
    """FAR and FRR of the report's test videos over all candidate thresholds, with the chosen threshold marked."""
    scores = [video.score for video in report.videos]
    genuine = [bool(video.genuine) for video in report.videos]
    thresholds, far, frr = det_curve(scores, genuine)
    finite = np.isfinite(thresholds)
    figure = Figure(figsize=(6.0, 4.0))
    axes = figure.add_subplot()
    axes.step(thresholds[finite], far[finite], where="post", label="FAR")
    axes.step(thresholds[finite], frr[finite], where="post", label="FRR")
    if np.isfinite(report.threshold):
        axes.axvline(
            report.threshold, color="black", linestyle="--", linewidth=1, label=f"threshold {report.threshold:.3f}"
        )
    axes.set_xlabel("threshold")
    axes.set_ylabel("error rate")
    axes.set_ylim(-0.02, 1.02)
    axes.set_title(f"{title} (HTER {report.hter:.3f})")
    axes.legend(loc="best")
    figure.tight_layout()
    return _save_svg(figure, path)


def plot_projection(
    metadata: Sequence[Mapping[str, str]], coordinates: np.ndarray, path: Union[str, Path], title: str = "features"
) -> Path:
    """Scatter of the first two principal components, one series per (domain, modality) group."""
    points = np.asarray(coordinates, dtype=np.float64)
    groups: Dict[str, List[int]] = {}
    for index, row in enumerate(metadata):
        groups.setdefault(f"{row['domain']} {row['modality']}", []).append(index)
    figure = Figure(figsize=(6.0, 5.0))
    axes = figure.add_subplot()
    for label in sorted(groups):
        rows = groups[label]
        marker = "o" if label.startswith("source") else "^"
        second = points[rows, 1] if points.shape[1] > 1 else np.zeros(len(rows))
        axes.scatter(points[rows, 0], second, s=12, marker=marker, alpha=0.7, label=label)
    axes.set_xlabel("pc1")
    axes.set_ylabel("pc2")
    axes.set_title(title)
    axes.grid(True, alpha=0.3)
    axes.legend(loc="best", fontsize=8)
    figure.tight_layout()
    return _save_svg(figure, path)


__all__ = [
    "COMPARISON_COLUMNS",
    "SUMMARY_COLUMNS",
    "epoch_means",
    "plot_far_frr",
    "plot_loss_curve",
    "plot_projection",
    "write_comparison",
    "write_summary",
]
