from pathlib import Path
from typing import Any, Callable, Dict, Sequence, Tuple

import numpy as np
import pytest


@pytest.fixture(autouse=True)
def clear_lru_cache() -> None:
    from mmdadapt.kernels import _off_diagonal

    _off_diagonal.cache_clear()


@pytest.fixture(autouse=True)
def no_active_tape() -> None:
    from mmdadapt import tensor

    tensor._state.tape = None


DatasetFactory = Callable[..., Any]


@pytest.fixture
def make_dataset() -> DatasetFactory:
    """Builds an in-memory dataset: every subject gets one genuine video and one video per fake modality."""
    from mmdadapt.data import Dataset, SampleRecord

    def factory(
        subjects: Sequence[Tuple[str, str]],
        domain: str = "source",
        modalities: Sequence[str] = ("print", "video"),
        frames: int = 2,
        side: int = 8,
        seed: int = 0,
        shift: float = 0.0,
        name: str = "",
    ) -> Dataset:
        rng = np.random.default_rng(seed)
        records = []
        images = []
        for subject, split in subjects:
            for modality in ("real", *modalities):
                label = "genuine" if modality == "real" else "fake"
                video = f"{subject}-{modality}"
                brightness = 0.6 if modality == "real" else 0.3
                for frame in range(frames):
                    records.append(
                        SampleRecord(
                            path=f"{video}-{frame}.png",
                            domain=domain,
                            label=label,
                            modality=modality,
                            subject=subject,
                            split=split,
                            video=video,
                            frame=frame,
                        )
                    )
                    noise = rng.uniform(-0.1, 0.1, size=(1, side, side))
                    images.append(np.clip(brightness + shift + noise, 0.0, 1.0))
        return Dataset(records=tuple(records), images=np.stack(images), modalities=tuple(modalities), name=name)

    return factory


FileTree = Callable[[Path], Dict[str, bytes]]


@pytest.fixture
def file_tree() -> FileTree:
    """Reads every file below a directory, keyed by its relative posix path."""

    def read(root: Path) -> Dict[str, bytes]:
        files = sorted(path for path in root.rglob("*") if path.is_file())
        return {path.relative_to(root).as_posix(): path.read_bytes() for path in files}

    return read
