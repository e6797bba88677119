"""Two-Half batches and the joint classification + domain objectives.

Every training batch consists of two halves of equal size: a source half drawn from the labelled source dataset
and a target half drawn from the target dataset. The objectives combine the softmax cross entropy on the source
half with biased squared MMD terms between the last-pooling features of the two halves:

``loss_classification``
    Cross entropy on the source half only; the target half is ignored.
``loss_unsupervised``
    ``L_C + lam * MMD^2(source features, target features)``; target labels are never read.
``loss_semisupervised``
    ``L_C + lam * MMD^2(source genuine, target genuine) + lam * sum_i MMD^2(source modality i, target modality i)``;
    target labels only decide which cell a target sample falls in. The modality sum is not averaged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ProtocolError, ShapeError
from .kernels import DEFAULT_KERNEL, KernelSpec, mmd2_biased
from .layers import softmax_cross_entropy
from .model import GENUINE_CLASS, ModelParams, forward
from .tensor import Tensor, take_rows

if TYPE_CHECKING:  # pragma: no cover
    from .data import Dataset

logger = logging.getLogger(__name__)

REAL_CELL = "real"


@dataclass(frozen=True)
class BatchHalf:
    """Samples of one domain inside a batch; ``indices`` point into the dataset the samples were drawn from."""

    images: np.ndarray
    labels: np.ndarray
    modalities: Tuple[str, ...]
    indices: np.ndarray

    def __len__(self) -> int:
        return int(len(self.labels))


@dataclass(frozen=True)
class DomainBatch:
    """A Two-Half batch: equally many source and target samples.

    Raises:
        ShapeError: If the halves differ in size or hold no samples.
        ProtocolError: If a sample carries a modality outside the declared set.
    """

    source: BatchHalf
    target: BatchHalf
    modalities: Tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.source) != len(self.target) or not len(self.source):
            raise ShapeError(
                f"a batch needs two non-empty halves of equal size, got {len(self.source)} and {len(self.target)}"
            )
        allowed = {REAL_CELL, *self.modalities}
        for half_name, half in (("source", self.source), ("target", self.target)):
            unknown = sorted(set(half.modalities) - allowed)
            if unknown:
                raise ProtocolError(f"{half_name} half holds undeclared modalities {unknown}")

    @property
    def size(self) -> int:
        return 2 * len(self.source)


@dataclass(frozen=True)
class ModalityPartition:
    """Row indices of the genuine samples and of each fake modality, for the source and the target half."""

    cells: Tuple[str, ...]
    source: Dict[str, np.ndarray] = field(default_factory=dict)
    target: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_batch(cls, batch: DomainBatch) -> ModalityPartition:
        """Partitions both halves of a batch into the genuine cell and one cell per declared modality.

        Raises:
            ProtocolError: If a cell is empty on either side, naming the cell.
        """
        cells = (REAL_CELL, *batch.modalities)
        halves = {}
        for half_name, half in (("source", batch.source), ("target", batch.target)):
            tags = np.asarray(half.modalities, dtype=object)
            genuine = half.labels == GENUINE_CLASS
            assignment = {REAL_CELL: np.flatnonzero(genuine)}
            for modality in batch.modalities:
                assignment[modality] = np.flatnonzero(~genuine & (tags == modality))
            for cell, rows in assignment.items():
                if not rows.size:
                    raise ProtocolError(f"modality '{cell}' has no sample in the {half_name} half of the batch")
            halves[half_name] = assignment
        return cls(cells=cells, source=halves["source"], target=halves["target"])


def _cells(dataset: Dataset, modalities: Sequence[str]) -> Dict[str, np.ndarray]:
    labels = dataset.labels()
    tags = np.asarray(dataset.modality_tags(), dtype=object)
    genuine = labels == GENUINE_CLASS
    cells = {REAL_CELL: np.flatnonzero(genuine)}
    for modality in modalities:
        cells[modality] = np.flatnonzero(~genuine & (tags == modality))
    return cells


def _check_cells(cells: Mapping[str, np.ndarray], dataset_name: str, half: int) -> None:
    for cell, rows in cells.items():
        if not rows.size:
            raise ProtocolError(f"modality '{cell}' has no sample in the {dataset_name} dataset")
    if len(cells) > half:
        raise ProtocolError(f"a half of {half} samples cannot hold one sample of each of {len(cells)} cells")


def _stratified(rng: np.random.Generator, cells: Mapping[str, np.ndarray], pool: np.ndarray, half: int) -> np.ndarray:
    chosen = [int(rng.choice(cells[cell])) for cell in cells]
    remaining = half - len(chosen)
    if remaining:
        chosen.extend(rng.choice(pool, size=remaining, replace=len(pool) < remaining).tolist())
    return rng.permutation(np.asarray(chosen, dtype=np.intp))


def _half(dataset: Dataset, indices: np.ndarray) -> BatchHalf:
    labels = dataset.labels()
    tags = dataset.modality_tags()
    return BatchHalf(
        images=dataset.images[indices],
        labels=labels[indices],
        modalities=tuple(tags[int(i)] for i in indices),
        indices=indices,
    )


def two_half_batches(
    source: Dataset, target: Dataset, batch_size: int, seed: int = 0, *, stratified: bool = False
) -> Iterator[DomainBatch]:
    """Endless, seed-deterministic stream of Two-Half batches.

    Source halves walk through reshuffled permutations of the source dataset. Target halves are drawn at random
    from the target dataset, with replacement ("copied") when the target pool is smaller than a half. With
    ``stratified`` every half first receives one random sample of the genuine cell and of each declared modality,
    so every cell of the semi-supervised objective is populated.

    Source and target draws use independent child streams of ``seed``: the source halves do not depend on the
    target dataset.

    Args:
        source: The labelled source dataset.
        target: The target dataset.
        batch_size: Total batch size (both halves), even and at least 4.
        seed: Seed of the batch order.
        stratified: Guarantee one sample per cell in each half.

    Raises:
        ValueError: If the batch size is odd or smaller than 4, or a dataset is empty.
        ProtocolError: In stratified mode, if a cell has no sample in either dataset.
    """
    if batch_size < 4 or batch_size % 2:
        raise ValueError(f"batch size must be even and at least 4, got {batch_size}")
    if not len(source) or not len(target):
        raise ValueError("two_half_batches needs non-empty source and target datasets")

    half = batch_size // 2
    modalities = tuple(source.modalities)
    source_cells = target_cells = None
    if stratified:
        source_cells = _cells(source, modalities)
        target_cells = _cells(target, modalities)
        _check_cells(source_cells, source.name or "source", half)
        _check_cells(target_cells, target.name or "target", half)
    if len(target) < half:
        logger.warning("target pool of %d samples is smaller than a half of %d; samples are copied", len(target), half)

    source_seed, target_seed = np.random.SeedSequence(seed).spawn(2)
    source_rng, target_rng = np.random.default_rng(source_seed), np.random.default_rng(target_seed)
    source_pool, target_pool = np.arange(len(source)), np.arange(len(target))

    def stream() -> Iterator[DomainBatch]:
        order = source_rng.permutation(len(source))
        position = 0
        while True:
            if source_cells is not None:
                source_indices = _stratified(source_rng, source_cells, source_pool, half)
            else:
                taken = []
                while len(taken) < half:
                    if position == len(order):
                        order, position = source_rng.permutation(len(source)), 0
                    step = min(half - len(taken), len(order) - position)
                    taken.extend(order[position : position + step].tolist())
                    position += step
                source_indices = np.asarray(taken, dtype=np.intp)

            if target_cells is not None:
                target_indices = _stratified(target_rng, target_cells, target_pool, half)
            else:
                target_indices = target_rng.choice(target_pool, size=half, replace=len(target) < half)

            yield DomainBatch(
                source=_half(source, source_indices), target=_half(target, target_indices), modalities=modalities
            )

    return stream()


@dataclass(frozen=True)
class LossBreakdown:
    """Value of an objective: the scalar ``total``, its classification term and every domain term.

    ``buffers`` holds the batch-norm running statistics after the train-mode forward pass.
    """

    total: Tensor
    classification: Tensor
    domain: Dict[str, Tensor]
    buffers: Dict[str, np.ndarray]

    def terms(self) -> Dict[str, float]:
        return {name: term.item() for name, term in self.domain.items()}


def _check_lam(lam: float) -> None:
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")


def _joint_forward(
    params: ModelParams, batch: DomainBatch, weights: Optional[Mapping[str, Tensor]]
) -> Tuple[Tensor, Tensor, Tensor, Dict[str, np.ndarray]]:
    """Forwards both halves as one train-mode batch; returns (logits, source features, target features, buffers)."""
    half = len(batch.source)
    result = forward(params, np.concatenate([batch.source.images, batch.target.images]), "train", weights)
    source_features = take_rows(result.features, range(half))
    target_features = take_rows(result.features, range(half, 2 * half))
    return result.logits, source_features, target_features, result.buffers


def loss_classification(
    params: ModelParams, batch: DomainBatch, weights: Optional[Mapping[str, Tensor]] = None
) -> LossBreakdown:
    """Softmax cross entropy of the source half; the objective of the plain classifier."""
    result = forward(params, batch.source.images, "train", weights)
    classification = softmax_cross_entropy(result.logits, batch.source.labels)
    return LossBreakdown(total=classification, classification=classification, domain={}, buffers=result.buffers)


def loss_unsupervised(
    params: ModelParams,
    batch: DomainBatch,
    spec: KernelSpec = DEFAULT_KERNEL,
    lam: float = 0.5,
    weights: Optional[Mapping[str, Tensor]] = None,
) -> LossBreakdown:
    """``L_C(source) + lam * MMD^2(source features, target features)``, without target labels.

    With ``lam == 0`` the target half is not forwarded and the result equals ``loss_classification``.
    """
    _check_lam(lam)
    if lam == 0:
        return loss_classification(params, batch, weights)

    logits, source_features, target_features, buffers = _joint_forward(params, batch, weights)
    classification = softmax_cross_entropy(take_rows(logits, range(len(batch.source))), batch.source.labels)
    mmd = mmd2_biased(source_features, target_features, spec)
    return LossBreakdown(
        total=classification + lam * mmd, classification=classification, domain={"mmd": mmd}, buffers=buffers
    )


def loss_semisupervised(
    params: ModelParams,
    batch: DomainBatch,
    partition: Optional[ModalityPartition] = None,
    spec: KernelSpec = DEFAULT_KERNEL,
    lam: float = 0.5,
    weights: Optional[Mapping[str, Tensor]] = None,
    target_in_classification: bool = False,
) -> LossBreakdown:
    """Classification loss plus one MMD term for the genuine samples and one per fake modality.

    Args:
        params: Network parameters.
        batch: A Two-Half batch.
        partition: Cell assignment of the batch; derived from the batch when omitted.
        spec: Kernel of the MMD terms.
        lam: Weight of every domain term.
        weights: Tensors replacing ``params.weights``, to differentiate through the loss.
        target_in_classification: Also include the labelled target half in the cross entropy.

    Raises:
        ProtocolError: If a partition cell is empty.
    """
    _check_lam(lam)
    if lam == 0 and not target_in_classification:
        return loss_classification(params, batch, weights)

    partition = partition or ModalityPartition.from_batch(batch)
    logits, source_features, target_features, buffers = _joint_forward(params, batch, weights)
    if target_in_classification:
        labels = np.concatenate([batch.source.labels, batch.target.labels])
        classification = softmax_cross_entropy(logits, labels)
    else:
        classification = softmax_cross_entropy(take_rows(logits, range(len(batch.source))), batch.source.labels)

    domain: Dict[str, Tensor] = {}
    total = classification
    for cell in partition.cells:
        term = mmd2_biased(
            take_rows(source_features, partition.source[cell]), take_rows(target_features, partition.target[cell]), spec
        )
        domain[cell] = term
        total = total + lam * term
    return LossBreakdown(total=total, classification=classification, domain=domain, buffers=buffers)


__all__ = [
    "BatchHalf",
    "DomainBatch",
    "LossBreakdown",
    "ModalityPartition",
    "REAL_CELL",
    "loss_classification",
    "loss_semisupervised",
    "loss_unsupervised",
    "two_half_batches",
]
