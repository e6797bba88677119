"""Scoring, evaluation and the cross-dataset test protocol.

``mmdadapt.pipeline.evaluate_model(params, devel, test)``
    Picks the equal error rate threshold on the development split, then scores the test split at it.
``mmdadapt.pipeline.cross_test(source, target, config)``
    Trains on the source train split (plus target training data, depending on the objective) for each method,
    evaluates on the target domain (inter-test) and on the source domain (intra-test).

Test labels are only read after the threshold of an evaluation is fixed: scores are computed on unlabelled video
groups first and labels are attached afterwards.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Dataset, ProtocolViews, split_protocol
from .exceptions import ProtocolError, ValidationError
from .metrics import (
    EvalReport,
    PCAProjection,
    ScoreRecord,
    VideoScore,
    aggregate_video,
    domain_centroid_distance,
    eer_threshold,
    evaluate_at_threshold,
    pca_project,
    write_scores,
)
from .model import GENUINE_CLASS, ArchitectureConfig, ModelParams, extract_features, predict_genuine, save_checkpoint
from .report import write_comparison
from .training import OBJECTIVES, TrainConfig, TrainResult, train, write_loss_log

logger = logging.getLogger(__name__)


def _video_groups(dataset: Dataset) -> List[Tuple[str, str, List[int]]]:
    groups: Dict[str, Tuple[str, List[int]]] = {}
    for index, record in enumerate(dataset.records):
        subject, rows = groups.setdefault(record.video, (record.subject, []))
        if subject != record.subject:
            raise ValidationError(f"video '{record.video}' is tagged with subjects '{subject}' and '{record.subject}'")
        rows.append(index)
    return [(video, subject, rows) for video, (subject, rows) in groups.items()]


def score_dataset(params: ModelParams, dataset: Dataset) -> List[VideoScore]:
    """Video scores (mean genuine probability of the frames) in first-appearance order, without labels."""
    if not len(dataset):
        raise ValidationError(f"dataset '{dataset.name}' is empty")
    frame_scores = predict_genuine(params, dataset.images)
    videos = []
    for video, subject, rows in _video_groups(dataset):
        frames = tuple(float(np.clip(frame_scores[row], 0.0, 1.0)) for row in rows)
        record = ScoreRecord(video=video, subject=subject, genuine=False, frames=frames)
        videos.append(VideoScore(video=video, subject=subject, score=aggregate_video(record), frames=len(frames)))
    return videos


def attach_labels(videos: Sequence[VideoScore], dataset: Dataset) -> List[VideoScore]:
    """Adds the genuine/fake label of every video from the dataset.

    Raises:
        ValidationError: If a video mixes genuine and fake frames or is unknown to the dataset.
    """
    labels = dataset.labels()
    genuine: Dict[str, bool] = {}
    for index, record in enumerate(dataset.records):
        value = bool(labels[index] == GENUINE_CLASS)
        if genuine.setdefault(record.video, value) != value:
            raise ValidationError(f"video '{record.video}' mixes genuine and fake frames")
    try:
        return [dataclasses.replace(video, genuine=genuine[video.video]) for video in videos]
    except KeyError as exc:
        raise ValidationError(f"video {exc} is not part of dataset '{dataset.name}'") from None


def evaluate_model(params: ModelParams, devel: Dataset, test: Dataset) -> EvalReport:
    """Evaluates a model under the development/test protocol.

    Raises:
        ProtocolError: If the development or test split misses a class.
    """
    dev_videos = attach_labels(score_dataset(params, devel), devel)
    threshold = eer_threshold([video.score for video in dev_videos], [bool(video.genuine) for video in dev_videos])
    test_videos = score_dataset(params, test)
    report = evaluate_at_threshold(threshold, dev_videos, attach_labels(test_videos, test))
    logger.info(
        "evaluated %s at threshold %.6f: HTER %.4f AUC %.4f", test.name or "test", threshold, report.hter, report.auc
    )
    return report


def protocol_views(dataset: Dataset, seed: int = 0, scheme: Optional[str] = None) -> ProtocolViews:
    """Protocol views, creating the development split from half the test subjects when the dataset has none."""
    if scheme is None:
        scheme = "table1" if dataset.subjects("devel") else "equal-split-devel"
    return split_protocol(dataset, scheme, seed)


def select_labeled_subjects(train_view: Dataset, count: int, seed: int = 0) -> Dataset:
    """Seed-deterministic choice of ``count`` target training subjects whose labels may be used.

    Raises:
        ProtocolError: If ``count`` is not between 1 and the number of subjects.
    """
    subjects = train_view.subjects()
    if not 1 <= count <= len(subjects):
        raise ProtocolError(f"cannot select {count} labeled subjects out of {len(subjects)}")
    rng = np.random.default_rng(seed)
    chosen = sorted(subjects[int(i)] for i in rng.choice(len(subjects), size=count, replace=False))
    logger.info("labeled target subjects: %s", ", ".join(chosen))
    return train_view.select(subjects=chosen, name=f"{train_view.name}/labeled")


@dataclass(frozen=True)
class MethodResult:
    method: str
    inter: EvalReport
    intra: EvalReport
    training: TrainResult


@dataclass(frozen=True)
class CrossTestResult:
    methods: Dict[str, MethodResult]
    labeled_subjects: Tuple[str, ...]
    artifacts: Tuple[Path, ...] = field(default_factory=tuple)


def training_target(method: str, target_views: ProtocolViews, labeled: Dataset) -> Optional[Dataset]:
    if method == "stdcnn":
        return None
    if method == "unsupervised":
        return target_views.train
    return labeled


def cross_test(
    source: Dataset,
    target: Dataset,
    config: TrainConfig,
    labeled_subjects: int = 1,
    methods: Sequence[str] = OBJECTIVES,
    architecture: Optional[ArchitectureConfig] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> CrossTestResult:
    """Runs the cross-dataset protocol for every method.

    Each method trains on the source train split. ``unsupervised`` adapts to all target training samples without
    their labels, ``semisupervised`` to the samples of ``labeled_subjects`` randomly chosen target training subjects
    with their labels. The inter-test threshold comes from the target development split and is applied to the target
    test split; the intra-test does the same on the source splits.

    Artifacts (checkpoint, loss log, scores and reports per method, plus ``comparison.tsv``) are written to
    ``out_dir`` only after every method finished.

    Raises:
        ValidationError: If a method name is unknown.
        ProtocolError: If a split cannot be formed or misses a class.
    """
    unknown = [method for method in methods if method not in OBJECTIVES]
    if unknown or not methods:
        raise ValidationError(f"unknown cross-test methods {unknown}, expected some of {', '.join(OBJECTIVES)}")

    source_views = protocol_views(source, config.seed)
    target_views = protocol_views(target, config.seed)
    labeled = select_labeled_subjects(target_views.train, labeled_subjects, config.seed)

    results: Dict[str, MethodResult] = {}
    for method in methods:
        logger.info("cross-test: training %s", method)
        method_config = dataclasses.replace(config, objective=method)
        training = train(
            source_views.train, training_target(method, target_views, labeled), method_config, architecture
        )
        results[method] = MethodResult(
            method=method,
            inter=evaluate_model(training.params, target_views.devel, target_views.test),
            intra=evaluate_model(training.params, source_views.devel, source_views.test),
            training=training,
        )

    artifacts: Tuple[Path, ...] = ()
    result = CrossTestResult(methods=results, labeled_subjects=labeled.subjects())
    if out_dir is not None:
        artifacts = write_cross_test_artifacts(result, out_dir)
    return dataclasses.replace(result, artifacts=artifacts)


def write_cross_test_artifacts(result: CrossTestResult, out_dir: Union[str, Path]) -> Tuple[Path, ...]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: List[Path] = []
    for method, outcome in result.methods.items():
        paths.append(save_checkpoint(outcome.training.params, out_dir / f"{method}.ckpt"))
        paths.append(write_loss_log(outcome.training.rows, out_dir / f"{method}-loss.tsv"))
        paths.append(write_scores(outcome.inter.videos, out_dir / f"{method}-scores.tsv"))
        for kind, report in (("inter", outcome.inter), ("intra", outcome.intra)):
            path = out_dir / f"{method}-{kind}-report.json"
            path.write_text(report.to_json(), encoding="utf-8")
            paths.append(path)
    paths.append(write_comparison(result, out_dir / "comparison.tsv"))
    logger.info("wrote %d cross-test artifacts to %s", len(paths), out_dir)
    return tuple(paths)


def project_datasets(params: ModelParams, datasets: Sequence[Dataset], components: int = 3) -> PCAProjection:
    """Joint principal component projection of the last-pooling features of several datasets."""
    images = np.concatenate([dataset.images for dataset in datasets])
    return pca_project(extract_features(params, images), components)


def domain_gap(params: ModelParams, source: Dataset, target: Dataset, components: int = 3) -> float:
    """Distance between the source and target feature centroids in a joint principal component projection."""
    projection = project_datasets(params, (source, target), components)
    domains = ["source"] * len(source) + ["target"] * len(target)
    return domain_centroid_distance(projection.coordinates, domains, "source", "target")


__all__ = [
    "CrossTestResult",
    "MethodResult",
    "attach_labels",
    "cross_test",
    "domain_gap",
    "evaluate_model",
    "project_datasets",
    "protocol_views",
    "score_dataset",
    "select_labeled_subjects",
    "training_target",
    "write_cross_test_artifacts",
]
