"""Biometric evaluation of video-level scores.

Scores are oriented so that higher means more genuine; a video is accepted when its score is at least the
threshold ``tau``. The false acceptance rate (FAR) is the fraction of fake videos accepted, the false rejection
rate (FRR) the fraction of genuine videos rejected, and the half total error rate (HTER) their mean.

The threshold is chosen on a development split with ``eer_threshold`` and then applied unchanged to the test
split. All metrics operate on video scores, the mean of the per-frame genuine probabilities of a video.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.decomposition import PCA
from sklearn.metrics import roc_auc_score

from .exceptions import ProtocolError, ValidationError

logger = logging.getLogger(__name__)

GENUINE = "genuine"
FAKE = "fake"


@dataclass(frozen=True)
class ScoreRecord:
    """Per-frame genuine probabilities of one video.

    Raises:
        ValueError: If there are no frames or a probability lies outside [0, 1].
    """

    video: str
    subject: str
    genuine: bool
    frames: Tuple[float, ...]

    def __post_init__(self) -> None:
        frames = tuple(float(value) for value in self.frames)
        if not frames:
            raise ValueError(f"video '{self.video}' has no frame scores")
        if any(not 0.0 <= value <= 1.0 for value in frames):
            raise ValueError(f"frame scores of video '{self.video}' must lie in [0, 1]")
        object.__setattr__(self, "frames", frames)


def aggregate_video(record: ScoreRecord) -> float:
    """Mean of the frame scores of a video (correctly rounded, independent of frame order).

    Examples:
        >>> aggregate_video(ScoreRecord("v", "s", True, (0.7,)))
        0.7
    """
    return math.fsum(record.frames) / len(record.frames)


@dataclass(frozen=True)
class VideoScore:
    """Aggregated score of a video; ``genuine`` is None until the label is attached."""

    video: str
    subject: str
    score: float
    frames: int
    genuine: Optional[bool] = None


def _labelled(scores: Sequence[float], genuine: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(scores, dtype=np.float64).reshape(-1)
    mask = np.asarray(genuine, dtype=bool).reshape(-1)
    if values.shape != mask.shape:
        raise ValueError(f"got {values.size} scores for {mask.size} labels")
    if not mask.any() or mask.all():
        raise ProtocolError("score sets need at least one genuine and one fake video")
    return values, mask


def far_frr(scores: Sequence[float], genuine: Sequence[bool], threshold: float) -> Tuple[float, float]:
    """FAR and FRR at a threshold; a video is accepted when ``score >= threshold``.

    Raises:
        ProtocolError: If either class is empty.

    Examples:
        >>> far_frr([0.9, 0.4, 0.6, 0.1], [True, True, False, False], 0.5)
        (0.5, 0.5)
    """
    values, mask = _labelled(scores, genuine)
    accepted = values >= threshold
    far = float(np.count_nonzero(accepted & ~mask)) / float(np.count_nonzero(~mask))
    frr = float(np.count_nonzero(~accepted & mask)) / float(np.count_nonzero(mask))
    return far, frr


def candidate_thresholds(scores: Sequence[float]) -> np.ndarray:
    """Midpoints between adjacent distinct scores, with -inf and +inf appended at both ends."""
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate([[-np.inf], midpoints, [np.inf]])


def det_curve(scores: Sequence[float], genuine: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR and FRR over every candidate threshold; returns (thresholds, far, frr)."""
    values, mask = _labelled(scores, genuine)
    thresholds = candidate_thresholds(values)
    accepted = values[None, :] >= thresholds[:, None]
    far = np.count_nonzero(accepted & ~mask, axis=1) / np.count_nonzero(~mask)
    frr = np.count_nonzero(~accepted & mask, axis=1) / np.count_nonzero(mask)
    return thresholds, far.astype(np.float64), frr.astype(np.float64)


def eer_threshold(scores: Sequence[float], genuine: Sequence[bool]) -> float:
    """Threshold of the equal error rate on a development score set.

    Sweeps all candidate thresholds and picks the one with the smallest ``|FAR - FRR|``; ties go to the smaller
    FAR, then to the lower threshold.

    Raises:
        ProtocolError: If either class is empty.

    Examples:
        >>> eer_threshold([0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2], [True] * 4 + [False] * 4)
        0.55
    """
    thresholds, far, frr = det_curve(scores, genuine)
    best = min(range(len(thresholds)), key=lambda index: (abs(far[index] - frr[index]), far[index], index))
    return float(thresholds[best])


def hter(scores: Sequence[float], genuine: Sequence[bool], threshold: float) -> float:
    far, frr = far_frr(scores, genuine, threshold)
    return (far + frr) / 2.0


def accuracy(scores: Sequence[float], genuine: Sequence[bool], threshold: float) -> float:
    """Fraction of videos whose accept/reject decision at the threshold matches the label."""
    values, mask = _labelled(scores, genuine)
    return float(np.mean((values >= threshold) == mask))


def roc_auc(scores: Sequence[float], genuine: Sequence[bool]) -> float:
    """Probability that a random genuine video outscores a random fake one, ties counting one half.

    Raises:
        ProtocolError: If either class is empty.
    """
    values, mask = _labelled(scores, genuine)
    return float(roc_auc_score(mask.astype(int), values))


@dataclass(frozen=True)
class EvalReport:
    """Evaluation of a test split at a threshold chosen on a development split.

    ``hter`` is always exactly ``(far + frr) / 2``.
    """

    threshold: float
    far: float
    frr: float
    hter: float
    auc: float
    accuracy: float
    dev_far: float
    dev_frr: float
    counts: Dict[str, int] = field(default_factory=dict)
    videos: Tuple[VideoScore, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["videos"] = [asdict(video) for video in self.videos]
        if not math.isfinite(self.threshold):
            # strict JSON has no infinity; float() reads "inf" and "-inf" back
            result["threshold"] = repr(self.threshold)
        return result

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, value: Dict[str, Any]) -> EvalReport:
        try:
            videos = tuple(VideoScore(**video) for video in value.get("videos", ()))
            return cls(
                threshold=float(value["threshold"]),
                far=float(value["far"]),
                frr=float(value["frr"]),
                hter=float(value["hter"]),
                auc=float(value["auc"]),
                accuracy=float(value["accuracy"]),
                dev_far=float(value["dev_far"]),
                dev_frr=float(value["dev_frr"]),
                counts={str(key): int(count) for key, count in value.get("counts", {}).items()},
                videos=videos,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed evaluation report: {exc!r}") from exc

    @classmethod
    def read(cls, path: Union[str, Path]) -> EvalReport:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"'{path}' is not an evaluation report: {exc}") from exc


def _split_counts(prefix: str, videos: Sequence[VideoScore]) -> Dict[str, int]:
    genuine = sum(1 for video in videos if video.genuine)
    return {f"{prefix}_genuine": genuine, f"{prefix}_fake": len(videos) - genuine}


def evaluate_at_threshold(
    threshold: float, dev: Sequence[VideoScore], test: Sequence[VideoScore]
) -> EvalReport:
    """Scores the labelled test videos at a threshold that was derived from the development videos.

    Raises:
        ProtocolError: If a video has no label or a split misses a class.
    """
    for split, videos in (("development", dev), ("test", test)):
        if any(video.genuine is None for video in videos):
            raise ProtocolError(f"{split} videos must be labelled before evaluation")
    dev_scores, dev_genuine = [video.score for video in dev], [bool(video.genuine) for video in dev]
    test_scores, test_genuine = [video.score for video in test], [bool(video.genuine) for video in test]

    dev_far, dev_frr = far_frr(dev_scores, dev_genuine, threshold)
    far, frr = far_frr(test_scores, test_genuine, threshold)
    return EvalReport(
        threshold=threshold,
        far=far,
        frr=frr,
        hter=(far + frr) / 2.0,
        auc=roc_auc(test_scores, test_genuine),
        accuracy=accuracy(test_scores, test_genuine, threshold),
        dev_far=dev_far,
        dev_frr=dev_frr,
        counts={**_split_counts("devel", dev), **_split_counts("test", test)},
        videos=tuple(test),
    )


SCORES_HEADER = ("video", "subject", "label", "score")


def write_scores(videos: Iterable[VideoScore], path: Union[str, Path]) -> Path:
    """Writes labelled video scores as tab-separated ``video subject label score`` rows."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(SCORES_HEADER)
        for video in videos:
            label = "" if video.genuine is None else (GENUINE if video.genuine else FAKE)
            writer.writerow([video.video, video.subject, label, repr(video.score)])
    return path


def read_scores(path: Union[str, Path]) -> List[VideoScore]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter="\t")
        if tuple(next(reader, ())) != SCORES_HEADER:
            raise ValidationError(f"'{path}' is not a scores file")
        videos = []
        for number, row in enumerate(reader, start=2):
            if len(row) != len(SCORES_HEADER) or row[2] not in (GENUINE, FAKE, ""):
                raise ValidationError(f"{path}:{number}: malformed score row")
            genuine = None if not row[2] else row[2] == GENUINE
            videos.append(VideoScore(video=row[0], subject=row[1], score=float(row[3]), frames=0, genuine=genuine))
    return videos


@dataclass(frozen=True)
class PCAProjection:
    """Features projected onto their leading principal components.

    ``coordinates`` is (N, k); ``explained_variance`` (k,) is non-increasing and zero for components beyond the
    rank of the features.
    """

    coordinates: np.ndarray
    explained_variance: np.ndarray
    components: np.ndarray
    mean: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.coordinates @ self.components + self.mean


def pca_project(features: np.ndarray, components: int = 3) -> PCAProjection:
    """Projects mean-centered features onto the top eigenvectors of their covariance.

    Args:
        features: Matrix of shape (N, f) with N > components.
        components: Number of components k.

    Raises:
        ValueError: If there are not more samples than components.
    """
    values = np.asarray(features, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"features must be an (N, f) matrix, got shape {values.shape}")
    if components < 1 or values.shape[0] <= components:
        raise ValueError(f"pca_project needs more than {components} samples, got {values.shape[0]}")

    fitted = min(components, values.shape[1])
    pca = PCA(n_components=fitted, svd_solver="full")
    coordinates = pca.fit_transform(values)
    variance = np.clip(pca.explained_variance_, 0.0, None)
    basis = pca.components_
    if fitted < components:
        padding = components - fitted
        coordinates = np.hstack([coordinates, np.zeros((len(values), padding))])
        variance = np.concatenate([variance, np.zeros(padding)])
        basis = np.vstack([basis, np.zeros((padding, values.shape[1]))])
    return PCAProjection(
        coordinates=coordinates, explained_variance=variance, components=basis, mean=np.array(pca.mean_)
    )


def domain_centroid_distance(coordinates: np.ndarray, domains: Sequence[str], first: str, second: str) -> float:
    """Euclidean distance between the centroids of two domains in the projected space."""
    points = np.asarray(coordinates, dtype=np.float64)
    tags = np.asarray(domains, dtype=object)
    if not np.any(tags == first) or not np.any(tags == second):
        raise ValueError(f"both domains '{first}' and '{second}' need projected samples")
    return float(np.linalg.norm(points[tags == first].mean(axis=0) - points[tags == second].mean(axis=0)))


PROJECTION_COLUMNS = ("index", "domain", "label", "modality")


def write_projection(
    projection: PCAProjection,
    domains: Sequence[str],
    labels: Sequence[str],
    modalities: Sequence[str],
    path: Union[str, Path],
) -> Path:
    """Writes projected coordinates as tab-separated text, explained variances in leading ``#`` lines."""
    path = Path(path)
    k = projection.coordinates.shape[1]
    with path.open("w", newline="", encoding="utf-8") as handle:
        for index, variance in enumerate(projection.explained_variance, start=1):
            handle.write(f"# explained_variance pc{index} {float(variance)!r}\n")
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow([*PROJECTION_COLUMNS, *(f"pc{index}" for index in range(1, k + 1))])
        for index, (domain, label, modality, point) in enumerate(
            zip(domains, labels, modalities, projection.coordinates)
        ):
            writer.writerow([index, domain, label, modality, *(repr(float(value)) for value in point)])
    return path


def read_projection(path: Union[str, Path]) -> Tuple[List[Dict[str, str]], np.ndarray, np.ndarray]:
    """Reads a projection file; returns (row metadata, coordinates, explained variances)."""
    path = Path(path)
    variances: List[float] = []
    lines: List[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# explained_variance"):
            variances.append(float(line.split()[-1]))
        elif line and not line.startswith("#"):
            lines.append(line)
    reader = csv.reader(lines, delimiter="\t")
    header = next(reader, None)
    if not header or tuple(header[:4]) != PROJECTION_COLUMNS:
        raise ValidationError(f"'{path}' is not a projection file")
    metadata: List[Dict[str, str]] = []
    points: List[List[float]] = []
    for row in reader:
        metadata.append(dict(zip(PROJECTION_COLUMNS, row[:4])))
        points.append([float(value) for value in row[4:]])
    return metadata, np.asarray(points, dtype=np.float64).reshape(len(points), len(header) - 4), np.asarray(variances)


__all__ = [
    "EvalReport",
    "FAKE",
    "GENUINE",
    "PCAProjection",
    "ScoreRecord",
    "VideoScore",
    "accuracy",
    "aggregate_video",
    "candidate_thresholds",
    "det_curve",
    "domain_centroid_distance",
    "eer_threshold",
    "evaluate_at_threshold",
    "far_frr",
    "hter",
    "pca_project",
    "read_projection",
    "read_scores",
    "roc_auc",
    "write_projection",
    "write_scores",
]
