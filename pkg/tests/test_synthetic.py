from pathlib import Path
from typing import Callable, Dict

import numpy as np
import pytest

from mmdadapt.data import load_manifest
from mmdadapt.exceptions import ValidationError
from mmdadapt.kernels import mmd2_biased
from mmdadapt.synthetic import SyntheticSpec, domain_style, generate_synthetic, render_frame


def test_spec_defaults_and_validation() -> None:
    spec = SyntheticSpec()
    assert (spec.side, spec.subjects_train, spec.subjects_test, spec.subjects_devel) == (16, 8, 6, 6)
    assert spec.modalities == ("print", "video")
    assert spec.splits() == (("train", 8), ("test", 6), ("devel", 6))
    assert SyntheticSpec(modalities=["mask"]).modalities == ("mask",)

    for overrides in (
        {"side": 3},
        {"subjects_train": 0},
        {"subjects_devel": -1},
        {"frames_per_video": 0},
        {"modalities": ()},
        {"modalities": ("print", "print")},
        {"modalities": ("real",)},
        {"modalities": ("a,b",)},
        {"target_contrast": 0.0},
        {"source_noise": -0.1},
        {"attack_frequency": 0.0},
        {"target_brightness": float("inf")},
    ):
        with pytest.raises(ValidationError):
            SyntheticSpec(**overrides)  # type: ignore[arg-type]


def test_generation_is_byte_deterministic(tmp_path: Path, file_tree: Callable[[Path], Dict[str, bytes]]) -> None:
    spec = SyntheticSpec(side=8, subjects_train=2, subjects_test=1, subjects_devel=1, frames_per_video=2, seed=11)
    first = generate_synthetic(spec, tmp_path / "first")
    second = generate_synthetic(spec, tmp_path / "second")
    assert file_tree(tmp_path / "first") == file_tree(tmp_path / "second")
    assert np.array_equal(first.source.images, second.source.images)

    other_spec = SyntheticSpec(side=8, subjects_train=2, subjects_test=1, subjects_devel=1, seed=12)
    other = generate_synthetic(other_spec, tmp_path / "other")
    assert not np.array_equal(first.target.images[:4], other.target.images[:4])


def test_benchmark_layout(tmp_path: Path) -> None:
    spec = SyntheticSpec(subjects_train=3, subjects_test=2, subjects_devel=2, frames_per_video=3)
    bench = generate_synthetic(spec, tmp_path)
    for dataset, prefix in ((bench.source, "s"), (bench.target, "t")):
        assert len(dataset) == (3 + 2 + 2) * 3 * 3
        assert dataset.subjects("train") == tuple(f"{prefix}{i:03d}" for i in range(3))
        assert len(dataset.subjects("devel")) == 2
        assert dataset.modalities == ("print", "video")
        assert dataset.images.shape[1:] == (1, 16, 16)
        assert (dataset.labels() == 0).sum() == 7 * 3

    assert bench.source_manifest == tmp_path / "source.tsv"
    loaded = load_manifest(bench.target_manifest, side=16)
    assert loaded.records == bench.target.records
    assert np.array_equal(loaded.images, bench.target.images)


def test_corpus_without_devel_split(tmp_path: Path) -> None:
    bench = generate_synthetic(SyntheticSpec(side=8, subjects_train=1, subjects_test=2, subjects_devel=0), tmp_path)
    assert bench.source.subjects("devel") == ()
    assert len(bench.target.subjects("test")) == 2


def test_domains_differ_in_raw_pixels(tmp_path: Path) -> None:
    bench = generate_synthetic(SyntheticSpec(subjects_train=4, subjects_test=1, subjects_devel=1), tmp_path)
    source = bench.source.select(split="train").images.reshape(-1, 256)
    target = bench.target.select(split="train").images.reshape(-1, 256)
    assert mmd2_biased(source, target).item() > 0.1
    assert target.mean() > source.mean()


def test_attack_frames_carry_texture() -> None:
    spec = SyntheticSpec(source_noise=0.0)
    style = domain_style(spec, "source")
    face = (0.5, 0.5, 0.2)
    genuine = render_frame(spec, style, np.random.default_rng(0), face, "real").astype(float)
    attack = render_frame(spec, style, np.random.default_rng(0), face, "print").astype(float)
    assert genuine.shape == attack.shape == (16, 16)
    assert np.abs(np.diff(attack, axis=1)).mean() > np.abs(np.diff(genuine, axis=1)).mean()
    assert domain_style(spec, "target").contrast == spec.target_contrast
