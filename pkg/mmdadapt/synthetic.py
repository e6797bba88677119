"""Synthetic face anti-spoofing benchmark with a photometric domain shift.

Every subject has a face, a soft bright blob with a subject-specific position and width. A subject contributes one
genuine video and one attack video per modality to its split. Attack frames carry a sinusoidal texture (a
print or screen pattern) whose frequency and orientation depend on the modality. The target domain differs from
the source domain by a brightness offset, a contrast factor, stronger sensor noise and a shifted, weaker attack
texture, so a classifier trained on source data alone generalizes poorly to it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image

from .data import REAL_MODALITY, Dataset, SampleRecord, write_manifest
from .exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic benchmark.

    Subject counts apply per split to both domains; ``subjects_devel`` may be 0, which yields corpora without a
    development split. Frequencies are in cycles per image side.

    Raises:
        ValidationError: If a count, shift or texture parameter is out of range.
    """

    side: int = 16
    seed: int = 0
    modalities: Tuple[str, ...] = ("print", "video")
    subjects_train: int = 8
    subjects_test: int = 6
    subjects_devel: int = 6
    frames_per_video: int = 4
    source_brightness: float = 0.0
    source_contrast: float = 1.0
    source_noise: float = 0.03
    target_brightness: float = 0.18
    target_contrast: float = 0.65
    target_noise: float = 0.06
    attack_frequency: float = 3.0
    modality_frequency_step: float = 1.5
    texture_amplitude: float = 0.12
    target_frequency_shift: float = 1.0
    target_texture_gain: float = 0.8

    def __post_init__(self) -> None:
        object.__setattr__(self, "modalities", tuple(self.modalities))
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise ValidationError(f"synthetic spec field '{item.name}' must be finite, got {value}")
        if self.side < 4:
            raise ValidationError(f"synthetic images need a side of at least 4, got {self.side}")
        if self.subjects_train < 1 or self.subjects_test < 1 or self.subjects_devel < 0:
            raise ValidationError(
                "synthetic spec needs at least one train and one test subject per domain, got "
                f"train={self.subjects_train} test={self.subjects_test} devel={self.subjects_devel}"
            )
        if self.frames_per_video < 1:
            raise ValidationError(f"frames_per_video must be at least 1, got {self.frames_per_video}")
        if not self.modalities or len(set(self.modalities)) != len(self.modalities):
            raise ValidationError(f"modalities must be a non-empty list of distinct names, got {self.modalities}")
        for modality in self.modalities:
            if modality == REAL_MODALITY or not modality or any(char in modality for char in ",\t\n /"):
                raise ValidationError(f"invalid modality name '{modality}'")
        if self.source_contrast <= 0 or self.target_contrast <= 0:
            raise ValidationError("contrast factors must be positive")
        if self.source_noise < 0 or self.target_noise < 0 or self.texture_amplitude < 0:
            raise ValidationError("noise levels and texture amplitude must not be negative")
        if self.attack_frequency <= 0 or self.target_texture_gain < 0:
            raise ValidationError("attack_frequency must be positive and target_texture_gain non-negative")

    def splits(self) -> Tuple[Tuple[str, int], ...]:
        return (("train", self.subjects_train), ("test", self.subjects_test), ("devel", self.subjects_devel))


@dataclass(frozen=True)
class SyntheticBenchmark:
    source: Dataset
    target: Dataset
    source_manifest: Path
    target_manifest: Path


@dataclass(frozen=True)
class DomainStyle:
    brightness: float
    contrast: float
    noise: float
    frequency_shift: float
    texture_gain: float


def domain_style(spec: SyntheticSpec, domain: str) -> DomainStyle:
    if domain == "source":
        return DomainStyle(spec.source_brightness, spec.source_contrast, spec.source_noise, 0.0, 1.0)
    return DomainStyle(
        spec.target_brightness,
        spec.target_contrast,
        spec.target_noise,
        spec.target_frequency_shift,
        spec.target_texture_gain,
    )


def render_frame(
    spec: SyntheticSpec,
    style: DomainStyle,
    rng: np.random.Generator,
    face: Tuple[float, float, float],
    modality: str,
) -> np.ndarray:
    """Renders one frame as a (side, side) uint8 array."""
    side = spec.side
    yy, xx = np.mgrid[0:side, 0:side] / float(side)
    cx, cy, width = face
    cx, cy = cx + rng.normal(0.0, 0.02), cy + rng.normal(0.0, 0.02)
    image = 0.35 + 0.4 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * width * width))

    if modality != REAL_MODALITY:
        index = spec.modalities.index(modality)
        frequency = spec.attack_frequency + index * spec.modality_frequency_step + style.frequency_shift
        angle = index * math.pi / (2.0 * len(spec.modalities))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        wave = np.sin(2.0 * math.pi * frequency * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
        image = image + spec.texture_amplitude * style.texture_gain * wave

    image = style.contrast * (image - 0.5) + 0.5 + style.brightness
    image = image + rng.normal(0.0, style.noise, size=image.shape) if style.noise else image
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _generate_domain(
    spec: SyntheticSpec, domain: str, rng: np.random.Generator, out_dir: Path
) -> Tuple[List[SampleRecord], List[np.ndarray]]:
    style = domain_style(spec, domain)
    records: List[SampleRecord] = []
    images: List[np.ndarray] = []
    subject_index = 0
    for split, count in spec.splits():
        for _ in range(count):
            subject = f"{domain[0]}{subject_index:03d}"
            subject_index += 1
            face = (rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), rng.uniform(0.18, 0.26))
            for modality in (REAL_MODALITY, *spec.modalities):
                label = "genuine" if modality == REAL_MODALITY else "fake"
                video = f"{subject}-{modality}"
                directory = out_dir / "images" / domain / split / subject
                directory.mkdir(parents=True, exist_ok=True)
                for frame in range(spec.frames_per_video):
                    pixels = render_frame(spec, style, rng, face, modality)
                    relative = Path("images") / domain / split / subject / f"{video}-{frame:02d}.png"
                    Image.fromarray(pixels).save(out_dir / relative, format="PNG")
                    records.append(
                        SampleRecord(
                            path=relative.as_posix(),
                            domain=domain,
                            label=label,
                            modality=modality,
                            subject=subject,
                            split=split,
                            video=video,
                            frame=frame,
                        )
                    )
                    images.append(pixels.astype(np.float64) / 255.0)
    return records, images


def generate_synthetic(spec: SyntheticSpec, out_dir: Union[str, Path]) -> SyntheticBenchmark:
    """Renders the benchmark into ``out_dir`` and returns both domains as datasets.

    Writes ``source.tsv`` and ``target.tsv`` manifests and PNG frames under ``images/<domain>/<split>/<subject>/``.
    Equal specs give byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source_seed, target_seed = np.random.SeedSequence(spec.seed).spawn(2)

    datasets = {}
    manifests = {}
    for domain, seed in (("source", source_seed), ("target", target_seed)):
        records, images = _generate_domain(spec, domain, np.random.default_rng(seed), out_dir)
        manifests[domain] = write_manifest(records, out_dir / f"{domain}.tsv", spec.modalities)
        datasets[domain] = Dataset(
            records=tuple(records),
            images=np.stack(images)[:, None, :, :],
            modalities=spec.modalities,
            name=domain,
        )
        logger.info("generated %d %s frames in %s", len(records), domain, out_dir)

    return SyntheticBenchmark(
        source=datasets["source"],
        target=datasets["target"],
        source_manifest=manifests["source"],
        target_manifest=manifests["target"],
    )


__all__ = [
    "DomainStyle",
    "SyntheticBenchmark",
    "SyntheticSpec",
    "domain_style",
    "generate_synthetic",
    "render_frame",
]
