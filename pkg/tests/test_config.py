from pathlib import Path
from typing import Tuple

import pytest

from mmdadapt.config import RunConfig, build, coerce, field_types, load_config, parse_config
from mmdadapt.exceptions import ValidationError
from mmdadapt.synthetic import SyntheticSpec
from mmdadapt.training import TrainConfig


def test_coerce() -> None:
    assert coerce(" 0.25 ", float) == 0.25
    assert coerce("12", int) == 12
    assert coerce("Yes", bool) is True
    assert coerce("off", bool) is False
    assert coerce(" desk ", str) == "desk"
    assert coerce("2, 5,10 ,", Tuple[float, ...]) == (2.0, 5.0, 10.0)
    assert coerce("print,video", Tuple[str, ...]) == ("print", "video")
    with pytest.raises(ValueError):
        coerce("maybe", bool)
    with pytest.raises(ValueError):
        coerce("1.5", int)
    with pytest.raises(ValueError):
        coerce("x", dict)


def test_field_types() -> None:
    types = field_types(TrainConfig)
    assert types["lam"] is float
    assert types["batch_size"] is int
    assert types["target_in_classification"] is bool
    assert types["bandwidths"] == Tuple[float, ...]
    assert "modalities" in field_types(SyntheticSpec)


def test_parse_config() -> None:
    text = """
    # desk-scale run
    train.lam = 0.25
    train.bandwidths = 2, 5
    train.objective = unsupervised
    synth.modalities = print, video, mask
    synth.subjects_train = 3
    model.preset = desk
    model.input_side = 8
    """
    config = parse_config(text)
    assert config.train == {"lam": 0.25, "bandwidths": (2.0, 5.0), "objective": "unsupervised"}
    assert config.synth == {"modalities": ("print", "video", "mask"), "subjects_train": 3}

    train = config.train_config(epochs=3, lam=None)
    assert (train.lam, train.epochs, train.objective, train.bandwidths) == (0.25, 3, "unsupervised", (2.0, 5.0))
    assert config.train_config(lam=1.0).lam == 1.0
    assert config.synthetic_spec(seed=4).modalities == ("print", "video", "mask")
    assert config.architecture().input_side == 8
    assert config.architecture(input_side=12).input_side == 12
    assert RunConfig().architecture().input_side == 16


@pytest.mark.parametrize(
    "text,message",
    [
        ("train.lam 0.5", "cfg:1: expected 'section.key = value'"),
        ("lam = 0.5", "cfg:1: expected"),
        ("\n\ntrain.alpha = 1", "cfg:3: unknown configuration key 'train.alpha'"),
        ("eval.seed = 1", "cfg:1: unknown configuration key"),
        ("# ok\ntrain.epochs = many", "cfg:2: invalid value for 'train.epochs'"),
    ],
)
def test_parse_config_errors_name_the_line(text: str, message: str) -> None:
    with pytest.raises(ValidationError, match=message):
        parse_config(text, "cfg")


def test_invalid_combinations_raise_validation_errors() -> None:
    with pytest.raises(ValidationError):
        parse_config("train.batch_size = 3").train_config()
    with pytest.raises(ValidationError):
        parse_config("synth.side = 2").synthetic_spec()
    with pytest.raises(ValidationError, match="TrainConfig"):
        build(TrainConfig, {"unknown": 1})
    with pytest.raises(ValidationError):
        parse_config("model.preset = vgg").architecture()


def test_load_config(tmp_path: Path) -> None:
    assert load_config(None) == RunConfig()
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 2\n")
    assert load_config(path).train == {"epochs": 2}
    path.write_text("train.epochs = two\n")
    with pytest.raises(ValidationError, match="run.cfg:1:"):
        load_config(path)
    with pytest.raises(ValidationError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")
