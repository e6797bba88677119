"""Gaussian RBF mixture kernels and maximum mean discrepancy estimators.

``mmdadapt.kernels.mmd2_biased(X, Y, spec)``
    Plug-in (V-statistic) estimate of the squared MMD; always non-negative. This is the domain loss of training.
``mmdadapt.kernels.mmd2_unbiased(X, Y, spec)``
    U-statistic estimate of the squared MMD, excluding same-index kernel terms; may be negative.
``mmdadapt.kernels.mmd2_literal(X, Y, spec)``
    Estimator with uniform ``1 / (m / 2)`` coefficients over off-diagonal index pairs, kept for comparison only.

Sample sets are (m, d) matrices, given as tensors (to differentiate through the estimate) or plain arrays. The
kernel of a ``KernelSpec`` is ``k(x, y) = sum_i exp(-||x - y||^2 / (2 sigma_i^2))``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Literal, Sequence, Tuple, Union

import numpy as np

from .exceptions import ShapeError
from .tensor import ArrayLike, Tensor, clamp_min, record_and_backward

DEFAULT_BANDWIDTHS: Tuple[float, ...] = (2.0, 5.0, 10.0, 20.0, 40.0, 80.0)

SampleSet = Union[Tensor, np.ndarray, Sequence[Sequence[float]]]
Estimator = Literal["biased", "unbiased"]


@dataclass(frozen=True)
class KernelSpec:
    """A mixture of Gaussian RBF kernels with fixed bandwidths.

    Raises:
        ValueError: If the bandwidth list is empty or holds a non-positive or non-finite value.
    """

    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS

    def __post_init__(self) -> None:
        bandwidths = tuple(float(sigma) for sigma in self.bandwidths)
        if not bandwidths:
            raise ValueError("a kernel spec needs at least one bandwidth")
        if any(not math.isfinite(sigma) or sigma <= 0 for sigma in bandwidths):
            raise ValueError(f"kernel bandwidths must be positive and finite, got {bandwidths}")
        object.__setattr__(self, "bandwidths", bandwidths)

    @classmethod
    def single(cls, sigma: float) -> KernelSpec:
        return cls((sigma,))

    @property
    def components(self) -> int:
        return len(self.bandwidths)


DEFAULT_KERNEL = KernelSpec()


def _vector_pair(x: ArrayLike, y: ArrayLike) -> float:
    x_, y_ = np.asarray(x, dtype=np.float64).reshape(-1), np.asarray(y, dtype=np.float64).reshape(-1)
    if x_.shape != y_.shape:
        raise ShapeError(f"kernel arguments must have equal dimensions, got {x_.size} and {y_.size}")
    diff = x_ - y_
    return float(diff @ diff)


def rbf_eval(x: ArrayLike, y: ArrayLike, sigma: float) -> float:
    """Evaluates ``exp(-||x - y||^2 / (2 sigma^2))``.

    Raises:
        ValueError: If sigma is not positive.
        ShapeError: If x and y differ in dimension.

    Examples:
        >>> rbf_eval([0.0, 0.0], [2.0, 2.0], 2.0)
        0.36787944117144233
    """
    if not sigma > 0:
        raise ValueError(f"rbf bandwidth must be positive, got {sigma}")
    return math.exp(-_vector_pair(x, y) / (2.0 * sigma * sigma))


def mixture_eval(x: ArrayLike, y: ArrayLike, spec: KernelSpec = DEFAULT_KERNEL) -> float:
    """Evaluates the mixture kernel; ``mixture_eval(x, x, spec) == spec.components``."""
    distance = _vector_pair(x, y)
    return float(sum(math.exp(-distance / (2.0 * sigma * sigma)) for sigma in spec.bandwidths))


def as_sample_set(value: SampleSet, label: str = "sample set") -> Tensor:
    tensor = value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))
    if tensor.ndim != 2:
        raise ShapeError(f"{label} must be an (m, d) matrix, got shape {tensor.shape}")
    return tensor


def gram(X: SampleSet, Y: SampleSet, spec: KernelSpec = DEFAULT_KERNEL) -> Tensor:
    """Kernel matrix ``G[i, j] = k(X[i], Y[j])``.

    Squared distances use the ``||x||^2 + ||y||^2 - 2 x.y`` expansion and are clamped at zero.

    Raises:
        ShapeError: If X and Y are not matrices with the same number of columns.
    """
    x, y = as_sample_set(X, "X"), as_sample_set(Y, "Y")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"gram needs equal feature dimensions, got {x.shape[1]} and {y.shape[1]}")

    x_norms = (x * x).sum(axis=1).reshape(x.shape[0], 1)
    y_norms = (y * y).sum(axis=1).reshape(1, y.shape[0])
    distances = clamp_min(x_norms + y_norms - 2.0 * (x @ y.T), 0.0)

    result = None
    for sigma in spec.bandwidths:
        term = (distances * (-1.0 / (2.0 * sigma * sigma))).exp()
        result = term if result is None else result + term
    assert result is not None
    return result


@functools.lru_cache(maxsize=64)
def _off_diagonal(size: int) -> np.ndarray:
    mask = 1.0 - np.eye(size)
    mask.setflags(write=False)
    return mask


def _check_sizes(x: Tensor, y: Tensor, minimum: int, estimator: str) -> None:
    if x.shape[0] < minimum or y.shape[0] < minimum:
        raise ValueError(
            f"{estimator} MMD estimate needs at least {minimum} samples per set, got {x.shape[0]} and {y.shape[0]}"
        )


def mmd2_biased(X: SampleSet, Y: SampleSet, spec: KernelSpec = DEFAULT_KERNEL) -> Tensor:
    """Biased (V-statistic) estimate ``mean(Kxx) + mean(Kyy) - 2 mean(Kxy)`` of the squared MMD.

    Args:
        X: Samples of the first distribution, (m, d), m >= 1.
        Y: Samples of the second distribution, (n, d), n >= 1.
        spec: The kernel mixture.

    Returns:
        A scalar tensor, differentiable with respect to X and Y. ``mmd2_biased(X, X) == 0`` and
        ``mmd2_biased(X, Y) == mmd2_biased(Y, X)`` hold exactly.

    Raises:
        ShapeError: If the sample sets are not matrices of equal width.

    Examples:
        >>> mmd2_biased([[0.0]], [[2.0]], KernelSpec.single(1.0)).item()
        1.7293294335267746
    """
    x, y = as_sample_set(X, "X"), as_sample_set(Y, "Y")
    _check_sizes(x, y, 1, "biased")
    # the cross term is symmetrized so that swapping X and Y gives a bit-identical result
    cross = (gram(x, y, spec).mean() + gram(y, x, spec).mean()) * 0.5
    return gram(x, x, spec).mean() + gram(y, y, spec).mean() - 2.0 * cross


def mmd2_unbiased(X: SampleSet, Y: SampleSet, spec: KernelSpec = DEFAULT_KERNEL) -> Tensor:
    """Unbiased (U-statistic) estimate of the squared MMD.

    ``1/(m(m-1)) sum_{i != i'} k(x_i, x_i') + 1/(n(n-1)) sum_{j != j'} k(y_j, y_j') - 2/(mn) sum_{i,j} k(x_i, y_j)``

    Raises:
        ValueError: If either set has fewer than 2 samples.
        ShapeError: If the sample sets are not matrices of equal width.

    Examples:
        >>> mmd2_unbiased([[0.0], [2.0]], [[0.0], [2.0]], KernelSpec.single(1.0)).item()
        -0.8646647167633873
    """
    x, y = as_sample_set(X, "X"), as_sample_set(Y, "Y")
    _check_sizes(x, y, 2, "unbiased")
    m, n = x.shape[0], y.shape[0]
    within_x = (gram(x, x, spec) * _off_diagonal(m)).sum() * (1.0 / (m * (m - 1)))
    within_y = (gram(y, y, spec) * _off_diagonal(n)).sum() * (1.0 / (n * (n - 1)))
    cross = (gram(x, y, spec).sum() + gram(y, x, spec).sum()) * (1.0 / (m * n))
    return within_x + within_y - cross


def mmd2_literal(X: SampleSet, Y: SampleSet, spec: KernelSpec = DEFAULT_KERNEL) -> float:
    """Squared MMD with ``1 / (m / 2)`` on every term and off-diagonal index pairs only, for equal sample counts.

    This variant is neither the biased nor the unbiased estimator; it is never used for training.

    Raises:
        ValueError: If the sets differ in size or hold fewer than 2 samples.
    """
    x, y = as_sample_set(X, "X"), as_sample_set(Y, "Y")
    _check_sizes(x, y, 2, "literal")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"literal MMD estimate needs equal sample counts, got {x.shape[0]} and {y.shape[0]}")
    m = x.shape[0]
    mask = _off_diagonal(m)
    scale = 2.0 / m
    return float(
        scale * (gram(x, x, spec).data * mask).sum()
        + scale * (gram(y, y, spec).data * mask).sum()
        - scale * (gram(x, y, spec).data * mask).sum()
    )


def mmd2_grad(
    X: SampleSet, Y: SampleSet, spec: KernelSpec = DEFAULT_KERNEL, estimator: Estimator = "biased"
) -> np.ndarray:
    """Gradient of the squared MMD estimate with respect to the entries of X.

    Raises:
        ValueError: If the estimator is unknown or its sample-size preconditions fail.
    """
    estimate = {"biased": mmd2_biased, "unbiased": mmd2_unbiased}.get(estimator)
    if estimate is None:
        raise ValueError(f"unknown MMD estimator '{estimator}', expected 'biased' or 'unbiased'")
    y = as_sample_set(Y, "Y").data
    x = as_sample_set(X, "X").data
    _, grads = record_and_backward(lambda tensors: estimate(tensors["X"], y, spec), {"X": x})
    return grads["X"]


__all__ = [
    "DEFAULT_BANDWIDTHS",
    "DEFAULT_KERNEL",
    "Estimator",
    "KernelSpec",
    "SampleSet",
    "as_sample_set",
    "gram",
    "mixture_eval",
    "mmd2_biased",
    "mmd2_grad",
    "mmd2_literal",
    "mmd2_unbiased",
    "rbf_eval",
]
