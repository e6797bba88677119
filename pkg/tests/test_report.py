from pathlib import Path
from typing import List

import numpy as np
import pytest

from mmdadapt.metrics import EvalReport, VideoScore, evaluate_at_threshold
from mmdadapt.report import epoch_means, plot_far_frr, plot_loss_curve, plot_projection, write_summary
from mmdadapt.training import LossRow


def rows() -> List[LossRow]:
    return [
        LossRow(epoch=0, batch=0, classification=1.0, domain=(("real", 0.5), ("print", 0.2)), total=1.7),
        LossRow(epoch=0, batch=1, classification=0.6, domain=(("real", 0.3), ("print", 0.0)), total=0.9),
        LossRow(epoch=1, batch=0, classification=0.2, domain=(("real", 0.1), ("print", 0.1)), total=0.4),
    ]


def report() -> EvalReport:
    def video(name: str, score: float, genuine: bool) -> VideoScore:
        return VideoScore(video=name, subject=name[0], score=score, frames=1, genuine=genuine)

    dev = [video("a1", 0.9, True), video("a2", 0.2, False)]
    test = [video("b1", 0.8, True), video("b2", 0.4, True), video("b3", 0.6, False), video("b4", 0.1, False)]
    return evaluate_at_threshold(0.5, dev, test)


def test_epoch_means() -> None:
    series = epoch_means(rows())
    assert list(series) == ["total", "classification", "real", "print"]
    assert series["total"] == pytest.approx([1.3, 0.4])
    assert series["classification"] == pytest.approx([0.8, 0.2])
    assert series["real"] == pytest.approx([0.4, 0.1])
    assert epoch_means([]) == {"total": [], "classification": []}


def test_write_summary(tmp_path: Path) -> None:
    path = write_summary({"target": report()}, tmp_path / "summary.tsv")
    header, line = path.read_text().splitlines()
    assert header.split("\t") == ["report", "threshold", "far", "frr", "hter", "auc", "accuracy", "test_videos"]
    fields = line.split("\t")
    assert fields[:2] == ["target", "0.5"]
    assert fields[2:5] == ["0.500000", "0.500000", "0.500000"]
    assert fields[-1] == "4"


def test_plots_are_reproducible_svg(tmp_path: Path) -> None:
    first = plot_loss_curve(rows(), tmp_path / "first.svg")
    second = plot_loss_curve(rows(), tmp_path / "second.svg")
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().lstrip().startswith("<?xml")

    far_frr = plot_far_frr(report(), tmp_path / "far-frr.svg").read_text()
    assert "HTER 0.500" in far_frr

    metadata = [{"domain": domain, "modality": "real"} for domain in ("source", "source", "target")]
    projection = plot_projection(metadata, np.array([[0.0], [1.0], [2.0]]), tmp_path / "projection.svg")
    assert "target real" in projection.read_text()
