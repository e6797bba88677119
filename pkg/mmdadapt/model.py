"""Configurable convolutional classifier.

The network is a stack of convolution (optionally batch-normalized, always followed by a ReLU) and max pooling
layers, a stack of ReLU dense layers and a linear two-class head. The flattened output of the last pooling layer
is the feature representation used by the domain losses; the head's softmax probability of class 0 (genuine) is
the score used for evaluation.

``mmdadapt.model.build_model(config, seed)``
    Creates deterministically initialized parameters for an architecture.
``mmdadapt.model.forward_features(params, images, mode)``
    Flattened activations of the last pooling layer, shape (N, feature_width).
``mmdadapt.model.forward_logits(params, images, mode)``
    Class logits, shape (N, num_classes).
``mmdadapt.model.save_checkpoint(params, path)`` / ``mmdadapt.model.load_checkpoint(path)``
    Byte-reproducible checkpoint container (zip of ``header.json`` and ``.npy`` entries).
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from .exceptions import CheckpointError, ShapeError, ValidationError
from .layers import Mode, batchnorm2d, conv2d, conv_output_side, dense, maxpool2d, pool_output_side
from .tensor import Tensor, relu

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mmdadapt-checkpoint"
CHECKPOINT_VERSION = 1
GENUINE_CLASS = 0
FAKE_CLASS = 1

# fixed zip entry timestamps keep checkpoints byte-identical between runs
_ZIP_DATE_TIME = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ConvSpec:
    """Convolution layer; with ``batchnorm`` the convolution has no bias (the batch-norm shift replaces it)."""

    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    batchnorm: bool = True


@dataclass(frozen=True)
class PoolSpec:
    window: int = 2
    stride: Optional[int] = None


LayerSpec = Union[ConvSpec, PoolSpec]

DESK_LAYERS: Tuple[LayerSpec, ...] = (ConvSpec(8), PoolSpec(2), ConvSpec(16), PoolSpec(2))
ALEXNET_LAYERS: Tuple[LayerSpec, ...] = (
    ConvSpec(96, kernel=11, stride=4, padding=2),
    PoolSpec(3, 2),
    ConvSpec(256, kernel=5, stride=1, padding=2),
    PoolSpec(3, 2),
    ConvSpec(384, kernel=3, stride=1, padding=1),
    PoolSpec(3, 2),
    ConvSpec(384, kernel=3, stride=1, padding=1),
    PoolSpec(3, 2),
    ConvSpec(256, kernel=3, stride=1, padding=1),
    PoolSpec(2, 1),
)


@dataclass(frozen=True)
class ArchitectureConfig:
    """Layer chain of the classifier.

    Raises:
        ValidationError: If the chain has no pooling layer, does not end with one, or holds a non-positive size.
        ShapeError: If a spatial dimension drops below 1 somewhere in the stack.
    """

    input_side: int = 16
    in_channels: int = 1
    layers: Tuple[LayerSpec, ...] = DESK_LAYERS
    dense_widths: Tuple[int, ...] = (32,)
    num_classes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "dense_widths", tuple(int(width) for width in self.dense_widths))
        if self.input_side < 1 or self.in_channels < 1 or self.num_classes < 2:
            raise ValidationError(
                f"invalid architecture: input_side={self.input_side} in_channels={self.in_channels} "
                f"num_classes={self.num_classes}"
            )
        if any(width < 1 for width in self.dense_widths):
            raise ValidationError(f"dense widths must be positive, got {self.dense_widths}")
        if not any(isinstance(layer, PoolSpec) for layer in self.layers):
            raise ValidationError("the layer chain needs at least one pooling layer (features are taken there)")
        if not isinstance(self.layers[-1], PoolSpec):
            raise ValidationError("the layer chain must end with a pooling layer")
        self.shapes()

    @classmethod
    def desk(cls, input_side: int = 16) -> ArchitectureConfig:
        return cls(input_side=input_side)

    @classmethod
    def alexnet(cls, input_side: int = 224) -> ArchitectureConfig:
        return cls(input_side=input_side, layers=ALEXNET_LAYERS, dense_widths=(4096, 4096))

    def shapes(self) -> List[Tuple[str, Tuple[int, int, int]]]:
        """Output shape (channels, height, width) of every convolution and pooling layer, in order."""
        channels, side = self.in_channels, self.input_side
        result: List[Tuple[str, Tuple[int, int, int]]] = []
        conv_index = pool_index = 0
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                if layer.out_channels < 1 or layer.kernel < 1 or layer.stride < 1 or layer.padding < 0:
                    raise ValidationError(f"invalid convolution layer {layer}")
                side = conv_output_side(side, layer.kernel, layer.stride, layer.padding)
                channels = layer.out_channels
                label = f"conv{conv_index}"
                conv_index += 1
            else:
                if layer.window < 1 or (layer.stride is not None and layer.stride < 1):
                    raise ValidationError(f"invalid pooling layer {layer}")
                side = pool_output_side(side, layer.window, layer.stride) if layer.window <= side else 0
                label = f"pool{pool_index}"
                pool_index += 1
            if side < 1:
                raise ShapeError(f"spatial size drops below 1 at {label} (input side {self.input_side})")
            result.append((label, (channels, side, side)))
        return result

    @property
    def feature_layer(self) -> str:
        return self.shapes()[-1][0]

    @property
    def feature_width(self) -> int:
        channels, height, width = self.shapes()[-1][1]
        return channels * height * width


PRESETS = {"desk": ArchitectureConfig.desk, "alexnet": ArchitectureConfig.alexnet}


def architecture_preset(name: str, input_side: Optional[int] = None) -> ArchitectureConfig:
    factory = PRESETS.get(name)
    if factory is None:
        raise ValidationError(f"unknown architecture preset '{name}', expected one of {sorted(PRESETS)}")
    return factory() if input_side is None else factory(input_side)


def parameter_shapes(config: ArchitectureConfig) -> Tuple[Dict[str, Tuple[int, ...]], Dict[str, Tuple[int, ...]]]:
    """Learnable parameter shapes and batch-norm buffer shapes, keyed by parameter name, in forward order."""
    weights: Dict[str, Tuple[int, ...]] = {}
    buffers: Dict[str, Tuple[int, ...]] = {}
    channels = config.in_channels
    index = 0
    for layer in config.layers:
        if not isinstance(layer, ConvSpec):
            continue
        weights[f"conv{index}.weight"] = (layer.out_channels, channels, layer.kernel, layer.kernel)
        if layer.batchnorm:
            weights[f"bn{index}.gamma"] = (layer.out_channels,)
            weights[f"bn{index}.beta"] = (layer.out_channels,)
            buffers[f"bn{index}.running_mean"] = (layer.out_channels,)
            buffers[f"bn{index}.running_var"] = (layer.out_channels,)
        else:
            weights[f"conv{index}.bias"] = (layer.out_channels,)
        channels = layer.out_channels
        index += 1

    width = config.feature_width
    for index, out in enumerate(config.dense_widths):
        weights[f"dense{index}.weight"] = (width, out)
        weights[f"dense{index}.bias"] = (out,)
        width = out
    weights["head.weight"] = (width, config.num_classes)
    weights["head.bias"] = (config.num_classes,)
    return weights, buffers


@dataclass(frozen=True)
class ModelParams:
    """Learnable weights and batch-norm running statistics of a network, keyed by parameter name."""

    config: ArchitectureConfig
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.weights.values()))

    def replace(
        self, weights: Optional[Mapping[str, np.ndarray]] = None, buffers: Optional[Mapping[str, np.ndarray]] = None
    ) -> ModelParams:
        return dataclasses.replace(
            self,
            weights=dict(self.weights if weights is None else weights),
            buffers=dict(self.buffers if buffers is None else buffers),
        )


def build_model(config: ArchitectureConfig, seed: int = 0) -> ModelParams:
    """Initializes a network deterministically from a seed.

    Convolution and dense weights are drawn uniformly from ``[-b, b]`` with ``b = sqrt(6 / fan_in)``; biases and
    batch-norm shifts start at zero, batch-norm scales at one, running means at zero and running variances at one.

    Examples:
        >>> build_model(ArchitectureConfig.desk(), seed=0).parameter_count
        9562
    """
    rng = np.random.default_rng(seed)
    weight_shapes, buffer_shapes = parameter_shapes(config)
    weights: Dict[str, np.ndarray] = {}
    for name, shape in weight_shapes.items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            bound = math.sqrt(6.0 / fan_in)
            weights[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            weights[name] = np.ones(shape)
        else:
            weights[name] = np.zeros(shape)
    buffers = {
        name: np.zeros(shape) if name.endswith("running_mean") else np.ones(shape)
        for name, shape in buffer_shapes.items()
    }
    logger.debug("initialized %d parameters (seed %d)", sum(w.size for w in weights.values()), seed)
    return ModelParams(config=config, weights=weights, buffers=buffers)


@dataclass(frozen=True)
class ForwardResult:
    """Outputs of a forward pass.

    ``buffers`` holds the running statistics after the pass (updated in train mode), ``trace`` lists every layer
    with its output shape and ``feature_layer`` names the layer whose flattened output is ``features``.
    """

    features: Tensor
    logits: Tensor
    buffers: Dict[str, np.ndarray]
    trace: Tuple[Tuple[str, Tuple[int, ...]], ...]
    feature_layer: str


def _input_tensor(config: ArchitectureConfig, images: Union[Tensor, np.ndarray]) -> Tensor:
    batch = images if isinstance(images, Tensor) else Tensor(images)
    expected = (config.in_channels, config.input_side, config.input_side)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ShapeError(f"model expects a batch of shape (N, {', '.join(map(str, expected))}), got {batch.shape}")
    return batch


def forward(
    params: ModelParams,
    images: Union[Tensor, np.ndarray],
    mode: Mode = "eval",
    weights: Optional[Mapping[str, Tensor]] = None,
) -> ForwardResult:
    """Runs the network on an NCHW batch.

    Args:
        params: The network parameters.
        images: Batch of shape (N, in_channels, input_side, input_side).
        mode: "train" normalizes with batch statistics and updates the running statistics, "eval" uses the
            running statistics.
        weights: Tensors to use in place of ``params.weights``; pass tensors requiring a gradient to
            differentiate through the pass.

    Raises:
        ShapeError: If the batch does not match the architecture.
    """
    config = params.config
    x = _input_tensor(config, images)
    tensors = weights if weights is not None else {name: Tensor(value) for name, value in params.weights.items()}
    buffers = dict(params.buffers)
    trace: List[Tuple[str, Tuple[int, ...]]] = []

    conv_index = pool_index = 0
    feature_layer = ""
    for layer in config.layers:
        if isinstance(layer, ConvSpec):
            label = f"conv{conv_index}"
            bias = None if layer.batchnorm else tensors[f"{label}.bias"]
            x = conv2d(x, tensors[f"{label}.weight"], bias, stride=layer.stride, padding=layer.padding)
            if layer.batchnorm:
                bn = f"bn{conv_index}"
                normalized = batchnorm2d(
                    x,
                    tensors[f"{bn}.gamma"],
                    tensors[f"{bn}.beta"],
                    buffers[f"{bn}.running_mean"],
                    buffers[f"{bn}.running_var"],
                    mode=mode,
                )
                x = normalized.output
                buffers[f"{bn}.running_mean"] = normalized.running_mean
                buffers[f"{bn}.running_var"] = normalized.running_var
            x = relu(x)
            conv_index += 1
        else:
            label = f"pool{pool_index}"
            x = maxpool2d(x, layer.window, layer.stride)
            feature_layer = label
            pool_index += 1
        trace.append((label, x.shape))

    features = x.reshape(x.shape[0], int(np.prod(x.shape[1:])))
    hidden = features
    for index in range(len(config.dense_widths)):
        hidden = relu(dense(hidden, tensors[f"dense{index}.weight"], tensors[f"dense{index}.bias"]))
        trace.append((f"dense{index}", hidden.shape))
    logits = dense(hidden, tensors["head.weight"], tensors["head.bias"])
    trace.append(("head", logits.shape))

    return ForwardResult(
        features=features, logits=logits, buffers=buffers, trace=tuple(trace), feature_layer=feature_layer
    )


def forward_features(params: ModelParams, images: Union[Tensor, np.ndarray], mode: Mode = "eval") -> Tensor:
    return forward(params, images, mode).features


def forward_logits(params: ModelParams, images: Union[Tensor, np.ndarray], mode: Mode = "eval") -> Tensor:
    return forward(params, images, mode).logits


def predict_genuine(params: ModelParams, images: np.ndarray, chunk_size: int = 256) -> np.ndarray:
    """Eval-mode softmax probability of the genuine class for every image, computed in chunks."""
    images = np.asarray(images, dtype=np.float64)
    scores = [
        softmax(forward_logits(params, images[start : start + chunk_size], "eval").data, axis=1)[:, GENUINE_CLASS]
        for start in range(0, len(images), chunk_size)
    ]
    return np.concatenate(scores) if scores else np.zeros(0)


def extract_features(params: ModelParams, images: np.ndarray, chunk_size: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    chunks = [
        forward_features(params, images[start : start + chunk_size], "eval").data
        for start in range(0, len(images), chunk_size)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, params.config.feature_width))


def config_to_dict(config: ArchitectureConfig) -> Dict[str, Any]:
    layers: List[Dict[str, Any]] = []
    for layer in config.layers:
        kind = "conv" if isinstance(layer, ConvSpec) else "pool"
        layers.append({"kind": kind, **dataclasses.asdict(layer)})
    return {
        "input_side": config.input_side,
        "in_channels": config.in_channels,
        "layers": layers,
        "dense_widths": list(config.dense_widths),
        "num_classes": config.num_classes,
    }


def config_from_dict(value: Mapping[str, Any]) -> ArchitectureConfig:
    try:
        layers: List[LayerSpec] = []
        for layer in value["layers"]:
            options = {key: item for key, item in layer.items() if key != "kind"}
            if layer["kind"] == "conv":
                layers.append(ConvSpec(**options))
            elif layer["kind"] == "pool":
                layers.append(PoolSpec(**options))
            else:
                raise ValidationError(f"unknown layer kind '{layer['kind']}'")
        return ArchitectureConfig(
            input_side=int(value["input_side"]),
            in_channels=int(value["in_channels"]),
            layers=tuple(layers),
            dense_widths=tuple(value["dense_widths"]),
            num_classes=int(value["num_classes"]),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed architecture description: {exc!r}") from exc


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE_TIME)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def _array_bytes(value: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(value, dtype=np.float64), allow_pickle=False)
    return buffer.getvalue()


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    """Writes the architecture and all parameters to a checkpoint file.

    The file is a zip archive holding ``header.json`` and one ``weights/<name>.npy`` or ``buffers/<name>.npy``
    entry per array. Entries are stored uncompressed with fixed timestamps, so identical parameters give
    identical bytes.
    """
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": config_to_dict(params.config),
        "weights": list(params.weights),
        "buffers": list(params.buffers),
    }
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        _write_entry(archive, "header.json", (json.dumps(header, sort_keys=True, indent=2) + "\n").encode("utf-8"))
        for name, value in params.weights.items():
            _write_entry(archive, f"weights/{name}.npy", _array_bytes(value))
        for name, value in params.buffers.items():
            _write_entry(archive, f"buffers/{name}.npy", _array_bytes(value))
    path.write_bytes(buffer.getvalue())
    logger.info("wrote checkpoint %s", path)
    return path


def _read_arrays(
    archive: zipfile.ZipFile, group: str, names: Sequence[str], shapes: Mapping[str, Tuple[int, ...]]
) -> Dict[str, np.ndarray]:
    if set(names) != set(shapes):
        raise CheckpointError(f"checkpoint {group} do not match the architecture: {sorted(set(names) ^ set(shapes))}")
    result: Dict[str, np.ndarray] = {}
    for name in shapes:
        value = np.lib.format.read_array(io.BytesIO(archive.read(f"{group}/{name}.npy")), allow_pickle=False)
        if value.shape != shapes[name]:
            raise CheckpointError(f"checkpoint entry '{name}' has shape {value.shape}, expected {shapes[name]}")
        if not np.all(np.isfinite(value)):
            raise CheckpointError(f"checkpoint entry '{name}' contains non-finite values")
        result[name] = np.array(value, dtype=np.float64)
    return result


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """Reads a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: If the file is missing, not a checkpoint, of another format version, or inconsistent.
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as archive:
            header = json.loads(archive.read("header.json").decode("utf-8"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"'{path}' is not a {CHECKPOINT_FORMAT} file")
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint version {header.get('version')!r} (expected {CHECKPOINT_VERSION})"
                )
            config = config_from_dict(header["architecture"])
            weight_shapes, buffer_shapes = parameter_shapes(config)
            weights = _read_arrays(archive, "weights", header["weights"], weight_shapes)
            buffers = _read_arrays(archive, "buffers", header["buffers"], buffer_shapes)
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint '{path}': {exc}") from exc
    return ModelParams(config=config, weights=weights, buffers=buffers)


__all__ = [
    "ALEXNET_LAYERS",
    "ArchitectureConfig",
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "ConvSpec",
    "DESK_LAYERS",
    "FAKE_CLASS",
    "ForwardResult",
    "GENUINE_CLASS",
    "LayerSpec",
    "ModelParams",
    "PRESETS",
    "PoolSpec",
    "architecture_preset",
    "build_model",
    "config_from_dict",
    "config_to_dict",
    "extract_features",
    "forward",
    "forward_features",
    "forward_logits",
    "load_checkpoint",
    "parameter_shapes",
    "predict_genuine",
    "save_checkpoint",
]
