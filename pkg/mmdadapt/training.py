"""Training loop of the domain-adaptive classifier.

``mmdadapt.training.train(source, target, config)``
    Trains a freshly initialized network with Adam on Two-Half batches and returns the parameters together with
    the per-batch loss rows and per-epoch summaries.
``mmdadapt.training.write_loss_log(rows, path)`` / ``mmdadapt.training.read_loss_log(path)``
    Tab-separated loss log with the header ``epoch batch classification <domain terms...> total``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from .exceptions import NonFiniteError, TrainingError, ValidationError
from .kernels import DEFAULT_BANDWIDTHS, KernelSpec
from .model import ArchitectureConfig, ModelParams, build_model, save_checkpoint
from .objectives import (
    DomainBatch,
    LossBreakdown,
    loss_classification,
    loss_semisupervised,
    loss_unsupervised,
    two_half_batches,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor

if TYPE_CHECKING:  # pragma: no cover
    from .data import Dataset

logger = logging.getLogger(__name__)

OBJECTIVES = ("stdcnn", "unsupervised", "semisupervised")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run.

    ``batches_per_epoch`` of 0 means one pass over the source dataset in source halves; ``checkpoint_every`` of 0
    disables periodic checkpoints.

    Raises:
        ValidationError: If a value is out of range.
    """

    lam: float = 0.5
    batch_size: int = 32
    epochs: int = 20
    learning_rate: float = 1e-3
    seed: int = 0
    objective: str = "semisupervised"
    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS
    batches_per_epoch: int = 0
    checkpoint_every: int = 0
    target_in_classification: bool = False

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective '{self.objective}', expected one of {', '.join(OBJECTIVES)}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lam must be a non-negative number, got {self.lam}")
        if self.batch_size < 4 or self.batch_size % 2:
            raise ValidationError(f"batch_size must be even and at least 4, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be at least 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batches_per_epoch < 0 or self.checkpoint_every < 0:
            raise ValidationError("batches_per_epoch and checkpoint_every must not be negative")
        try:
            KernelSpec(tuple(self.bandwidths))
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        object.__setattr__(self, "bandwidths", tuple(float(sigma) for sigma in self.bandwidths))

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.bandwidths)


@dataclass(frozen=True)
class LossRow:
    epoch: int
    batch: int
    classification: float
    domain: Tuple[Tuple[str, float], ...]
    total: float


@dataclass(frozen=True)
class EpochSummary:
    epoch: int
    mean_total: float
    mean_classification: float
    mean_domain: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class TrainResult:
    params: ModelParams
    epochs: Tuple[EpochSummary, ...]
    rows: Tuple[LossRow, ...]

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].mean_total


def _objective(
    config: TrainConfig, params: ModelParams, batch: DomainBatch, weights: Dict[str, Tensor]
) -> LossBreakdown:
    if config.objective == "stdcnn":
        return loss_classification(params, batch, weights)
    if config.objective == "unsupervised":
        return loss_unsupervised(params, batch, config.kernel, config.lam, weights)
    return loss_semisupervised(
        params,
        batch,
        spec=config.kernel,
        lam=config.lam,
        weights=weights,
        target_in_classification=config.target_in_classification,
    )


def train(
    source: Dataset,
    target: Optional[Dataset],
    config: TrainConfig,
    architecture: Optional[ArchitectureConfig] = None,
    log_path: Optional[Union[str, Path]] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Trains a network on the source dataset, adapted towards the target dataset.

    The ``stdcnn`` objective ignores the target dataset entirely. The network is initialized from ``config.seed``
    and the batch stream is derived from the same seed, so two runs with equal inputs give identical parameters.

    Args:
        source: Labelled source training data.
        target: Target training data (all of it unlabelled in the unsupervised objective, the few labelled
            subjects in the semi-supervised one). Ignored by ``stdcnn``.
        config: Hyperparameters.
        architecture: Network layout, defaults to the desk preset sized to the source images.
        log_path: Where to write the loss log once training succeeded.
        checkpoint_path: Where to write the periodic and the final checkpoint.

    Raises:
        ValidationError: If a required dataset is empty.
        TrainingError: If a non-finite loss or gradient occurs, naming the epoch and batch.
    """
    if not len(source):
        raise ValidationError("the source training set is empty")
    if config.objective != "stdcnn" and (target is None or not len(target)):
        raise ValidationError(f"the '{config.objective}' objective needs a non-empty target training set")

    side = int(source.images.shape[-1])
    architecture = architecture or ArchitectureConfig.desk(input_side=side)
    params = build_model(architecture, seed=config.seed)
    state = AdamState.initial(params.weights, lr=config.learning_rate)

    batch_target = source if config.objective == "stdcnn" or target is None else target
    batches = two_half_batches(
        source,
        batch_target,
        config.batch_size,
        seed=config.seed,
        stratified=config.objective == "semisupervised",
    )
    batches_per_epoch = config.batches_per_epoch or max(1, math.ceil(len(source) / (config.batch_size // 2)))
    logger.info(
        "training %s: %d epochs x %d batches of %d (lam=%s, %d parameters)",
        config.objective,
        config.epochs,
        batches_per_epoch,
        config.batch_size,
        config.lam,
        params.parameter_count,
    )

    rows: List[LossRow] = []
    summaries: List[EpochSummary] = []
    for epoch in range(config.epochs):
        epoch_rows: List[LossRow] = []
        for index in range(batches_per_epoch):
            batch = next(batches)
            weights = {name: Tensor(value, requires_grad=True) for name, value in params.weights.items()}
            try:
                with Tape() as tape:
                    breakdown = _objective(config, params, batch, weights)
                grads = tape.gradients(breakdown.total, weights)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {index}: {exc}") from exc

            updated, state = adam_step(params.weights, grads, state)
            if not all(np.all(np.isfinite(value)) for value in updated.values()):
                raise TrainingError(f"non-finite parameters after epoch {epoch} batch {index}")
            params = params.replace(weights=updated, buffers=breakdown.buffers)

            row = LossRow(
                epoch=epoch,
                batch=index,
                classification=breakdown.classification.item(),
                domain=tuple(breakdown.terms().items()),
                total=breakdown.total.item(),
            )
            logger.debug("epoch %d batch %d loss %.6f", epoch, index, row.total)
            epoch_rows.append(row)

        summary = _summarize(epoch, epoch_rows)
        logger.info(
            "epoch %d: mean loss %.6f (classification %.6f)", epoch, summary.mean_total, summary.mean_classification
        )
        summaries.append(summary)
        rows.extend(epoch_rows)
        if checkpoint_path is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(params, checkpoint_path)

    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
    if log_path is not None:
        write_loss_log(rows, log_path)
    return TrainResult(params=params, epochs=tuple(summaries), rows=tuple(rows))


def _summarize(epoch: int, rows: List[LossRow]) -> EpochSummary:
    names = [name for name, _ in rows[0].domain] if rows else []
    return EpochSummary(
        epoch=epoch,
        mean_total=float(np.mean([row.total for row in rows])),
        mean_classification=float(np.mean([row.classification for row in rows])),
        mean_domain={name: float(np.mean([dict(row.domain)[name] for row in rows])) for name in names},
    )


def _term_column(name: str) -> str:
    return name if name == "mmd" else f"mmd_{name}"


def write_loss_log(rows: Iterable[LossRow], path: Union[str, Path]) -> Path:
    """Writes loss rows as tab-separated text; floats use ``repr`` so they read back exactly."""
    path = Path(path)
    rows = list(rows)
    names = [name for name, _ in rows[0].domain] if rows else []
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["epoch", "batch", "classification", *(_term_column(name) for name in names), "total"])
        for row in rows:
            terms = dict(row.domain)
            domain = (repr(terms[name]) for name in names)
            writer.writerow([row.epoch, row.batch, repr(row.classification), *domain, repr(row.total)])
    logger.info("wrote loss log %s (%d rows)", path, len(rows))
    return path


def read_loss_log(path: Union[str, Path]) -> List[LossRow]:
    """Reads a loss log written by ``write_loss_log``.

    Raises:
        ValidationError: If the header or a row is malformed.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter="\t")
        header = next(reader, None)
        if not header or header[:3] != ["epoch", "batch", "classification"] or header[-1] != "total":
            raise ValidationError(f"'{path}' is not a loss log (unexpected header {header})")
        names = [column[4:] if column.startswith("mmd_") else column for column in header[3:-1]]
        rows: List[LossRow] = []
        for number, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise ValidationError(f"{path}:{number}: expected {len(header)} columns, got {len(record)}")
            try:
                rows.append(
                    LossRow(
                        epoch=int(record[0]),
                        batch=int(record[1]),
                        classification=float(record[2]),
                        domain=tuple(zip(names, (float(value) for value in record[3:-1]))),
                        total=float(record[-1]),
                    )
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{number}: {exc}") from exc
    return rows


__all__ = [
    "EpochSummary",
    "LossRow",
    "OBJECTIVES",
    "TrainConfig",
    "TrainResult",
    "read_loss_log",
    "train",
    "write_loss_log",
]
