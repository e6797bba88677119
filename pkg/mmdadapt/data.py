"""Manifest-driven datasets of face crops.

A manifest is tab-separated text with the header ``path domain label modality subject split video frame``. Lines
starting with ``#`` are comments, except for an optional ``# modalities: print,video`` line which declares the
fake modalities of the corpus (otherwise they are inferred from the rows). Relative image paths resolve against
the directory of the manifest.

Every load enforces the manifest invariants: known domain, label, split and modality values, ``genuine`` exactly
for the ``real`` modality, subjects confined to one split per domain and decodable images. Images are converted
to grayscale, center-cropped to a square, resized to the configured side and scaled to [0, 1].
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ProtocolError, ValidationError
from .model import FAKE_CLASS, GENUINE_CLASS

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("path", "domain", "label", "modality", "subject", "split", "video", "frame")
DOMAINS = ("source", "target")
LABELS = ("genuine", "fake")
SPLITS = ("train", "test", "devel")
REAL_MODALITY = "real"
_MODALITIES_DIRECTIVE = "# modalities:"


@dataclass(frozen=True)
class SampleRecord:
    """One manifest row: a single frame of a video of a subject."""

    path: str
    domain: str
    label: str
    modality: str
    subject: str
    split: str
    video: str
    frame: int

    @property
    def genuine(self) -> bool:
        return self.label == "genuine"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of records and their decoded images, shape (N, 1, side, side).

    ``modalities`` lists the declared fake modalities. Class labels (0 genuine, 1 fake) are only exposed through
    ``labels()``.
    """

    records: Tuple[SampleRecord, ...]
    images: np.ndarray
    modalities: Tuple[str, ...]
    name: str = ""
    _labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if len(self.images) != len(self.records):
            raise ValidationError(f"dataset has {len(self.records)} records but {len(self.images)} images")
        images = np.asarray(self.images, dtype=np.float64)
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        labels = np.array([GENUINE_CLASS if record.genuine else FAKE_CLASS for record in self.records], dtype=np.intp)
        labels.setflags(write=False)
        object.__setattr__(self, "_labels", labels)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return self._labels

    def modality_tags(self) -> Tuple[str, ...]:
        return tuple(record.modality for record in self.records)

    def subjects(self, split: Optional[str] = None) -> Tuple[str, ...]:
        return tuple(sorted({record.subject for record in self.records if split is None or record.split == split}))

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> Dataset:
        index = np.asarray(indices, dtype=np.intp).reshape(-1)
        return dataclasses.replace(
            self,
            records=tuple(self.records[int(i)] for i in index),
            images=self.images[index] if index.size else self.images[:0],
            name=self.name if name is None else name,
        )

    def select(
        self, split: Optional[str] = None, subjects: Optional[Iterable[str]] = None, name: Optional[str] = None
    ) -> Dataset:
        """View of the records of a split and/or a set of subjects."""
        wanted = None if subjects is None else set(subjects)
        indices = [
            index
            for index, record in enumerate(self.records)
            if (split is None or record.split == split) and (wanted is None or record.subject in wanted)
        ]
        suffix = "/".join(part for part in (split, None if wanted is None else "subjects") if part)
        return self.subset(indices, name=name or (f"{self.name}/{suffix}" if suffix else self.name))


def _check_record(record: SampleRecord, number: int, modalities: Optional[Sequence[str]]) -> None:
    where = f"row {number}"
    if record.domain not in DOMAINS:
        raise ValidationError(f"{where}: unknown domain '{record.domain}'")
    if record.label not in LABELS:
        raise ValidationError(f"{where}: unknown label '{record.label}'")
    if record.split not in SPLITS:
        raise ValidationError(f"{where}: unknown split '{record.split}'")
    if modalities is not None and record.modality != REAL_MODALITY and record.modality not in modalities:
        raise ValidationError(f"{where}: unknown modality '{record.modality}'")
    if record.genuine != (record.modality == REAL_MODALITY):
        raise ValidationError(f"{where}: label '{record.label}' does not match modality '{record.modality}'")
    if not record.subject or not record.video:
        raise ValidationError(f"{where}: subject and video ids must not be empty")


def check_subject_splits(records: Sequence[SampleRecord], rows: Optional[Sequence[int]] = None) -> None:
    """Raises ``ValidationError`` when a subject appears in more than one split of the same domain."""
    seen: Dict[Tuple[str, str], Tuple[str, int]] = {}
    for position, record in enumerate(records):
        number = rows[position] if rows is not None else position + 1
        key = (record.domain, record.subject)
        first = seen.setdefault(key, (record.split, number))
        if first[0] != record.split:
            raise ValidationError(
                f"row {number}: subject '{record.subject}' of the {record.domain} domain appears in splits "
                f"'{first[0]}' (row {first[1]}) and '{record.split}'"
            )


def read_manifest(path: Union[str, Path]) -> Tuple[List[SampleRecord], List[int], Optional[Tuple[str, ...]]]:
    """Parses and validates a manifest without decoding images.

    Returns:
        The records, their line numbers and the declared modalities (None if the manifest declares none).

    Raises:
        ValidationError: On a malformed header or row, naming the line number.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read manifest '{path}': {exc.strerror or exc}") from exc

    declared: Optional[Tuple[str, ...]] = None
    numbered: List[Tuple[int, str]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if line.startswith(_MODALITIES_DIRECTIVE):
            declared = tuple(item.strip() for item in line[len(_MODALITIES_DIRECTIVE) :].split(",") if item.strip())
        elif line.strip() and not line.startswith("#"):
            numbered.append((number, line))

    if not numbered:
        raise ValidationError(f"manifest '{path}' has no header")
    header_number, header_line = numbered[0]
    if tuple(header_line.split("\t")) != MANIFEST_COLUMNS:
        raise ValidationError(f"row {header_number}: expected header '{' '.join(MANIFEST_COLUMNS)}'")

    records: List[SampleRecord] = []
    rows: List[int] = []
    for (number, _), fields in zip(numbered[1:], csv.reader([line for _, line in numbered[1:]], delimiter="\t")):
        if len(fields) != len(MANIFEST_COLUMNS):
            raise ValidationError(f"row {number}: expected {len(MANIFEST_COLUMNS)} columns, got {len(fields)}")
        try:
            frame = int(fields[7])
        except ValueError:
            raise ValidationError(f"row {number}: frame index '{fields[7]}' is not an integer") from None
        record = SampleRecord(*fields[:7], frame=frame)  # type: ignore[call-arg]
        _check_record(record, number, declared)
        records.append(record)
        rows.append(number)

    check_subject_splits(records, rows)
    return records, rows, declared


def decode_image(path: Union[str, Path], side: int) -> np.ndarray:
    """Decodes an image into a (side, side) grayscale array in [0, 1]; the central square crop is resized."""
    with Image.open(path) as image:
        gray = image.convert("L")
        width, height = gray.size
        edge = min(width, height)
        left, top = (width - edge) // 2, (height - edge) // 2
        square = gray.crop((left, top, left + edge, top + edge))
        if square.size != (side, side):
            square = square.resize((side, side), Image.BILINEAR)
        return np.asarray(square, dtype=np.float64) / 255.0


def load_manifest(
    path: Union[str, Path],
    side: int = 16,
    modalities: Optional[Sequence[str]] = None,
    workers: int = 1,
    name: Optional[str] = None,
) -> Dataset:
    """Loads and validates a manifest and decodes all of its images.

    Args:
        path: The manifest file.
        side: Side length of the decoded square images.
        modalities: Declared fake modalities; overrides the manifest's own declaration.
        workers: Number of threads decoding images.
        name: Dataset name used in messages, defaults to the manifest's file stem.

    Raises:
        ValidationError: If the manifest is empty or violates an invariant, or an image cannot be decoded; the
            message names the row.
    """
    path = Path(path)
    records, rows, declared = read_manifest(path)
    if not records:
        raise ValidationError(f"manifest '{path}' contains no samples")

    declared = tuple(modalities) if modalities is not None else declared
    if declared is not None:
        for record, number in zip(records, rows):
            _check_record(record, number, declared)
    else:
        declared = tuple(sorted({record.modality for record in records if record.modality != REAL_MODALITY}))

    def decode(position: int) -> np.ndarray:
        record = records[position]
        image_path = Path(record.path) if Path(record.path).is_absolute() else path.parent / record.path
        try:
            return decode_image(image_path, side)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            raise ValidationError(f"row {rows[position]}: unreadable image '{record.path}': {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            decoded = list(executor.map(decode, range(len(records))))
    else:
        decoded = [decode(position) for position in range(len(records))]

    logger.info("loaded %d samples from %s", len(records), path)
    return Dataset(
        records=tuple(records),
        images=np.stack(decoded)[:, None, :, :],
        modalities=declared,
        name=name or path.stem,
    )


def write_manifest(
    records: Iterable[SampleRecord], path: Union[str, Path], modalities: Optional[Sequence[str]] = None
) -> Path:
    """Writes records as a manifest, with a ``# modalities:`` line when modalities are given."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        if modalities is not None:
            handle.write(f"{_MODALITIES_DIRECTIVE} {','.join(modalities)}\n")
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for record in records:
            writer.writerow([getattr(record, column) for column in MANIFEST_COLUMNS])
    return path


@dataclass(frozen=True)
class ProtocolViews:
    """Subject-disjoint train, test and development views of a dataset."""

    train: Dataset
    test: Dataset
    devel: Dataset


PROTOCOL_SCHEMES = ("table1", "equal-split-devel")


def split_protocol(dataset: Dataset, scheme: str = "table1", seed: int = 0) -> ProtocolViews:
    """Splits a dataset into its protocol views.

    ``table1`` keeps the declared ``train``/``test``/``devel`` splits. ``equal-split-devel`` is meant for corpora
    without a development split: the test subjects are shuffled with the seed and half of them (rounded down) move
    to a new development split.

    Raises:
        ValidationError: If the scheme is unknown or subjects leak between splits.
        ProtocolError: If a view is empty, or ``equal-split-devel`` meets fewer than two test subjects or an
            existing development split.
    """
    if scheme not in PROTOCOL_SCHEMES:
        raise ValidationError(f"unknown protocol scheme '{scheme}', expected one of {', '.join(PROTOCOL_SCHEMES)}")
    check_subject_splits(dataset.records)

    if scheme == "equal-split-devel":
        if dataset.subjects("devel"):
            raise ProtocolError(f"dataset '{dataset.name}' already has a development split")
        test_subjects = list(dataset.subjects("test"))
        if len(test_subjects) < 2:
            raise ProtocolError(f"equal-split-devel needs at least 2 test subjects, got {len(test_subjects)}")
        rng = np.random.default_rng(seed)
        shuffled = [test_subjects[int(i)] for i in rng.permutation(len(test_subjects))]
        devel_subjects = set(shuffled[: len(shuffled) // 2])
        records = tuple(
            dataclasses.replace(record, split="devel")
            if record.split == "test" and record.subject in devel_subjects
            else record
            for record in dataset.records
        )
        dataset = dataclasses.replace(dataset, records=records)

    views = {split: dataset.select(split=split, name=f"{dataset.name}/{split}") for split in SPLITS}
    for split, view in views.items():
        if not len(view):
            raise ProtocolError(f"dataset '{dataset.name}' has no {split} samples")
    return ProtocolViews(train=views["train"], test=views["test"], devel=views["devel"])


__all__ = [
    "DOMAINS",
    "Dataset",
    "LABELS",
    "MANIFEST_COLUMNS",
    "PROTOCOL_SCHEMES",
    "ProtocolViews",
    "REAL_MODALITY",
    "SPLITS",
    "SampleRecord",
    "check_subject_splits",
    "decode_image",
    "load_manifest",
    "read_manifest",
    "split_protocol",
    "write_manifest",
]
