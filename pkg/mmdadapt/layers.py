"""Layer primitives of the convolutional classifier.

Every layer is a single recorded operation with a hand-written vector-Jacobian product, operating on NCHW
tensors (batch, channels, height, width) for the convolutional part and on (batch, features) matrices for the
dense part. Convolution is cross-correlation (the kernel is not flipped).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax

from .exceptions import ShapeError
from .tensor import Tensor, add, emit, matmul, relu

Mode = str

BATCHNORM_MOMENTUM = 0.9
BATCHNORM_EPS = 1e-5


def conv_output_side(side: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (side + 2 * padding - kernel) // stride + 1


def pool_output_side(side: int, window: int, stride: Optional[int] = None) -> int:
    return (side - window) // (stride or window) + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # (n, c, oh, ow, kh, kw) read-only view
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]


def conv2d(
    input: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Two-dimensional cross-correlation of an NCHW batch with an OCkk weight tensor.

    Args:
        input: Tensor of shape (N, C, H, W).
        weight: Tensor of shape (O, C, kh, kw).
        bias: Optional tensor of shape (O,).
        stride: Step between neighbouring windows, in both spatial directions.
        padding: Zero padding added on every spatial border.

    Returns:
        Tensor of shape (N, O, (H + 2p - kh) // s + 1, (W + 2p - kw) // s + 1).

    Raises:
        ShapeError: If the shapes are incompatible or the output would be empty.
        ValueError: If stride < 1 or padding < 0.

    Examples:
        >>> conv2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), Tensor(np.ones((1, 1, 2, 2)))).data
        array([[[[10.]]]])
    """
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got stride={stride} padding={padding}")
    if input.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OCkk weights, got {input.shape} and {weight.shape}")

    n, c, h, w = input.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d weight expects {ci} input channels, input has {c}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d bias must have shape ({o},), got {bias.shape}")
    oh, ow = conv_output_side(h, kh, stride, padding), conv_output_side(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")

    x = input.data
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _windows(xp, kh, kw, stride, oh, ow)
    value = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        value = value + bias.data[None, :, None, None]

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_weight = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
        grad_padded = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += (
                    np.tensordot(grad, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                )
        grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w] if padding else grad_padded
        if bias is None:
            return grad_input, grad_weight
        return grad_input, grad_weight, grad.sum(axis=(0, 2, 3))

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return emit("conv2d", inputs, value, backward)


def maxpool2d(input: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling over square windows of an NCHW batch.

    The backward pass routes the gradient to the position of the maximum; on ties the first position in
    row-major order within the window wins.

    Args:
        input: Tensor of shape (N, C, H, W).
        window: Side of the square pooling window.
        stride: Step between windows, defaults to the window side.

    Returns:
        Tensor of shape (N, C, (H - window) // stride + 1, (W - window) // stride + 1).

    Raises:
        ShapeError: If the input is not NCHW or the window is larger than the input.
    """
    stride = stride or window
    if window < 1 or stride < 1:
        raise ValueError(f"maxpool2d needs window >= 1 and stride >= 1, got window={window} stride={stride}")
    if input.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got shape {input.shape}")
    n, c, h, w = input.shape
    if window > h or window > w:
        raise ShapeError(f"maxpool2d window {window} is larger than input {h}x{w}")

    oh, ow = pool_output_side(h, window, stride), pool_output_side(w, window, stride)
    windows = _windows(input.data, window, window, stride, oh, ow).reshape(n, c, oh, ow, window * window)
    argmax = windows.argmax(axis=-1)
    value = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_input = np.zeros(input.shape)
        for position in range(window * window):
            di, dj = divmod(position, window)
            grad_input[:, :, di : di + stride * (oh - 1) + 1 : stride, dj : dj + stride * (ow - 1) + 1 : stride] += (
                np.where(argmax == position, grad, 0.0)
            )
        return (grad_input,)

    return emit("maxpool2d", (input,), value, backward)


@dataclass(frozen=True)
class BatchNormResult:
    output: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray


def batchnorm2d(
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: Mode = "train",
    momentum: float = BATCHNORM_MOMENTUM,
    eps: float = BATCHNORM_EPS,
) -> BatchNormResult:
    """Per-channel batch normalization of an NCHW batch followed by the affine map ``gamma * x + beta``.

    In train mode the batch mean and (biased) batch variance normalize the input and the running statistics are
    updated as ``momentum * running + (1 - momentum) * batch``. In eval mode the running statistics are used
    unchanged, so every sample is normalized independently of the rest of the batch.

    Args:
        input: Tensor of shape (N, C, H, W).
        gamma: Scale tensor of shape (C,).
        beta: Shift tensor of shape (C,).
        running_mean: Running mean of shape (C,).
        running_var: Running variance of shape (C,).
        mode: Either "train" or "eval".
        momentum: Weight of the previous running statistics in the moving average.
        eps: Added to the variance before taking the square root.

    Returns:
        The normalized tensor together with the (possibly updated) running statistics.

    Raises:
        ShapeError: If the parameter shapes do not match the channel count.
        ValueError: If the mode is unknown or the batch has a single sample in train mode.
    """
    if input.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got shape {input.shape}")
    n, c, h, w = input.shape
    for label, shape in (
        ("gamma", gamma.shape),
        ("beta", beta.shape),
        ("running_mean", np.shape(running_mean)),
        ("running_var", np.shape(running_var)),
    ):
        if shape != (c,):
            raise ShapeError(f"batchnorm2d {label} must have shape ({c},), got {shape}")

    def channel(values: np.ndarray) -> np.ndarray:
        return values[None, :, None, None]

    x = input.data
    if mode == "train":
        if n < 2:
            raise ValueError("batchnorm2d needs a batch of at least 2 samples in train mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = momentum * np.asarray(running_mean) + (1.0 - momentum) * mean
        new_var = momentum * np.asarray(running_var) + (1.0 - momentum) * var
    elif mode == "eval":
        mean = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
        new_mean, new_var = mean, var
    else:
        raise ValueError(f"batchnorm2d mode must be 'train' or 'eval', got '{mode}'")

    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = (x - channel(mean)) * channel(inv_std)
    value = channel(gamma.data) * normalized + channel(beta.data)
    count = n * h * w

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_beta = grad.sum(axis=(0, 2, 3))
        grad_gamma = (grad * normalized).sum(axis=(0, 2, 3))
        grad_normalized = grad * channel(gamma.data)
        if mode == "eval":
            return grad_normalized * channel(inv_std), grad_gamma, grad_beta
        grad_input = (
            channel(inv_std / count)
            * (
                count * grad_normalized
                - channel(grad_normalized.sum(axis=(0, 2, 3)))
                - normalized * channel((grad_normalized * normalized).sum(axis=(0, 2, 3)))
            )
        )
        return grad_input, grad_gamma, grad_beta

    output = emit("batchnorm2d", (input, gamma, beta), value, backward)
    return BatchNormResult(output=output, running_mean=np.array(new_mean), running_var=np.array(new_var))


def dense(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``input @ weight + bias`` of an (N, in) matrix with an (in, out) weight and an (out,) bias.

    Examples:
        >>> dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [1.0, 1.0]]), Tensor([1.0, 1.0])).data
        array([[4., 3.]])
    """
    if input.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"dense expects (N, in), (in, out), (out,), got {input.shape}, {weight.shape}, {bias.shape}")
    if input.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(f"dense shapes do not chain: {input.shape} @ {weight.shape} + {bias.shape}")
    return add(matmul(input, weight), bias)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of the labelled classes under a softmax over the logits.

    The log-softmax is computed with max subtraction, so very large logits do not overflow.

    Args:
        logits: Tensor of shape (N, C).
        labels: N class indices in [0, C).

    Returns:
        A scalar tensor.

    Raises:
        ShapeError: If the logits are not a matrix or the label count differs from N.
        ValueError: If a label is outside [0, C).

    Examples:
        >>> softmax_cross_entropy(Tensor([[2.0, 0.0]]), [1]).item()
        2.1269280110429727
    """
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, C) logits, got shape {logits.shape}")
    n, classes = logits.shape
    index = np.asarray(labels, dtype=np.intp).reshape(-1)
    if index.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy got {index.size} labels for {n} rows")
    if index.min() < 0 or index.max() >= classes:
        raise ValueError(f"softmax_cross_entropy labels must lie in [0, {classes}), got {sorted(set(index.tolist()))}")

    log_probs = log_softmax(logits.data, axis=1)
    rows = np.arange(n)
    value = np.asarray(-log_probs[rows, index].mean())

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        probs = np.exp(log_probs)
        probs[rows, index] -= 1.0
        return (probs * (grad / n),)

    return emit("softmax_cross_entropy", (logits,), value, backward)


__all__ = [
    "BATCHNORM_EPS",
    "BATCHNORM_MOMENTUM",
    "BatchNormResult",
    "batchnorm2d",
    "conv2d",
    "conv_output_side",
    "dense",
    "maxpool2d",
    "pool_output_side",
    "relu",
    "softmax_cross_entropy",
]
