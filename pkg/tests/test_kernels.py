import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from mmdadapt.exceptions import ShapeError
from mmdadapt.gradcheck import finite_difference_gradcheck
from mmdadapt.kernels import (
    DEFAULT_BANDWIDTHS,
    DEFAULT_KERNEL,
    KernelSpec,
    gram,
    mixture_eval,
    mmd2_biased,
    mmd2_grad,
    mmd2_literal,
    mmd2_unbiased,
    rbf_eval,
)
from mmdadapt.tensor import Tensor


def naive_gram(x: np.ndarray, y: np.ndarray, bandwidths: tuple) -> np.ndarray:
    distances = cdist(x, y, "sqeuclidean")
    return sum(np.exp(-distances / (2.0 * sigma * sigma)) for sigma in bandwidths)


def naive_biased(x: np.ndarray, y: np.ndarray, bandwidths: tuple) -> float:
    m, n = len(x), len(y)
    kxx, kyy, kxy = naive_gram(x, x, bandwidths), naive_gram(y, y, bandwidths), naive_gram(x, y, bandwidths)
    total = 0.0
    for i in range(m):
        for j in range(m):
            total += kxx[i, j] / (m * m)
    for i in range(n):
        for j in range(n):
            total += kyy[i, j] / (n * n)
    for i in range(m):
        for j in range(n):
            total -= 2.0 * kxy[i, j] / (m * n)
    return total


def naive_unbiased(x: np.ndarray, y: np.ndarray, bandwidths: tuple) -> float:
    m, n = len(x), len(y)
    kxx, kyy, kxy = naive_gram(x, x, bandwidths), naive_gram(y, y, bandwidths), naive_gram(x, y, bandwidths)
    within_x = sum(kxx[i, j] for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    within_y = sum(kyy[i, j] for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    cross = sum(kxy[i, j] for i in range(m) for j in range(n)) / (m * n)
    return within_x + within_y - 2.0 * cross


def test_kernel_spec() -> None:
    assert KernelSpec().bandwidths == DEFAULT_BANDWIDTHS == (2.0, 5.0, 10.0, 20.0, 40.0, 80.0)
    assert DEFAULT_KERNEL.components == 6
    assert KernelSpec.single(3).bandwidths == (3.0,)
    with pytest.raises(ValueError):
        KernelSpec(())
    with pytest.raises(ValueError):
        KernelSpec((1.0, 0.0))
    with pytest.raises(ValueError):
        KernelSpec((1.0, math.inf))


def test_rbf_eval() -> None:
    assert rbf_eval([1.0, 2.0], [1.0, 2.0], 0.5) == 1.0
    assert rbf_eval([0.0, 0.0], [2.0, 2.0], 2.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert rbf_eval([0.0, 0.0], [1.0, 1.0], 1.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    with pytest.raises(ValueError):
        rbf_eval([0.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        rbf_eval([0.0], [1.0], -1.0)
    with pytest.raises(ShapeError):
        rbf_eval([0.0, 1.0], [1.0], 1.0)


def test_mixture_eval() -> None:
    assert mixture_eval([0.3, -1.2], [0.3, -1.2]) == 6.0
    assert mixture_eval([0.0, 0.0], [2.0, 2.0]) == pytest.approx(5.167740, abs=1e-5)
    expected = sum(math.exp(-8.0 / (2.0 * sigma * sigma)) for sigma in DEFAULT_BANDWIDTHS)
    assert mixture_eval([0.0, 0.0], [2.0, 2.0]) == pytest.approx(expected, abs=1e-15)
    assert mixture_eval([0.0], [1e4]) < 1e-6


def test_gram_examples() -> None:
    x = np.array([[0.0], [2.0]])
    result = gram(x, x, KernelSpec.single(1.0)).data
    assert result.tolist() == pytest.approx([[1.0, math.exp(-2.0)], [math.exp(-2.0), 1.0]], abs=1e-15)

    rng = np.random.default_rng(0)
    points = rng.normal(size=(7, 3))
    matrix = gram(points, points).data
    assert np.allclose(matrix, matrix.T, atol=1e-12)
    assert np.allclose(np.diag(matrix), 6.0, atol=1e-12)
    with pytest.raises(ShapeError):
        gram(points, rng.normal(size=(2, 4)))
    with pytest.raises(ShapeError):
        gram(np.ones(3), np.ones(3))


@pytest.mark.parametrize("seed", range(200))
def test_estimators_match_double_sum_oracles(seed: int) -> None:
    rng = np.random.default_rng(seed)
    m, n, d = rng.integers(2, 17), rng.integers(2, 17), rng.integers(1, 9)
    x = rng.normal(size=(m, d)) * rng.uniform(0.5, 2.0)
    y = rng.normal(size=(n, d)) + rng.uniform(-1.0, 1.0)
    bandwidths = DEFAULT_BANDWIDTHS if seed % 2 else tuple(rng.uniform(1.0, 5.0, size=rng.integers(1, 4)))
    spec = KernelSpec(bandwidths)

    assert mmd2_biased(x, y, spec).item() == pytest.approx(naive_biased(x, y, spec.bandwidths), abs=1e-12)
    assert mmd2_unbiased(x, y, spec).item() == pytest.approx(naive_unbiased(x, y, spec.bandwidths), abs=1e-12)


def test_closed_form_examples() -> None:
    single = KernelSpec.single(1.0)
    assert mmd2_biased([[0.0]], [[2.0]], single).item() == pytest.approx(2.0 - 2.0 * math.exp(-2.0), abs=1e-15)
    assert mmd2_unbiased([[0.0], [2.0]], [[0.0], [2.0]], single).item() == pytest.approx(
        math.exp(-2.0) - 1.0, abs=1e-15
    )


def test_biased_estimator_identities() -> None:
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(6, 3)), rng.normal(size=(9, 3)) + 1.0
    assert mmd2_biased(x, x).item() == 0.0
    assert mmd2_biased(x, y).item() == mmd2_biased(y, x).item()
    assert mmd2_biased(x, y).item() > 0.0


def test_estimator_errors() -> None:
    with pytest.raises(ValueError):
        mmd2_unbiased([[0.0]], [[0.0], [1.0]])
    with pytest.raises(ShapeError):
        mmd2_biased(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        mmd2_biased(np.ones((2, 2, 1)), np.ones((2, 2)))


def test_unbiased_estimator_is_unbiased() -> None:
    rng = np.random.default_rng(2024)
    draws = np.array(
        [mmd2_unbiased(rng.normal(size=(20, 4)), rng.normal(size=(20, 4))).item() for _ in range(1000)]
    )
    standard_error = draws.std(ddof=1) / math.sqrt(len(draws))
    assert abs(draws.mean()) < 3.0 * standard_error


def test_literal_estimator() -> None:
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    spec = KernelSpec.single(1.5)
    kxx, kyy, kxy = (naive_gram(a, b, spec.bandwidths) for a, b in ((x, x), (y, y), (x, y)))
    mask = 1.0 - np.eye(5)
    expected = (2.0 / 5.0) * ((kxx * mask).sum() + (kyy * mask).sum() - (kxy * mask).sum())
    assert mmd2_literal(x, y, spec) == pytest.approx(expected, abs=1e-12)
    assert mmd2_literal(x, y, spec) != pytest.approx(mmd2_unbiased(x, y, spec).item())
    with pytest.raises(ValueError):
        mmd2_literal(x, y[:4], spec)


@pytest.mark.parametrize("estimator", ["biased", "unbiased"])
def test_mmd2_grad_matches_finite_differences(estimator: str) -> None:
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(6, 3)) + 0.5
    spec = KernelSpec((1.0, 2.0))
    estimate = mmd2_biased if estimator == "biased" else mmd2_unbiased
    report = finite_difference_gradcheck(lambda t: estimate(t, y, spec), x)
    assert report.passed, report

    gradient = mmd2_grad(x, y, spec, estimator)  # type: ignore[arg-type]
    assert gradient.shape == x.shape
    h = 1e-6
    shifted = x.copy()
    shifted[2, 1] += h
    numeric = (estimate(shifted, y, spec).item() - estimate(x, y, spec).item()) / h
    assert gradient[2, 1] == pytest.approx(numeric, rel=1e-3, abs=1e-6)


def test_mmd2_grad_stationary_points() -> None:
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 2))
    assert np.linalg.norm(mmd2_grad(x, x.copy())) < 1e-8

    far = np.vstack([x[:3], [[1e3, 1e3]]])
    assert np.abs(mmd2_grad(far, x, KernelSpec.single(1.0))[3]).max() < 1e-12
    with pytest.raises(ValueError):
        mmd2_grad(x, x, estimator="other")  # type: ignore[arg-type]


def test_gram_gradient_flows_through_tensors() -> None:
    from mmdadapt.tensor import record_and_backward

    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    value, grads = record_and_backward(lambda t: mmd2_biased(t["x"], Tensor(y)), {"x": [[0.5, 0.5], [2.0, 2.0]]})
    assert value > 0.0
    assert np.abs(grads["x"]).sum() > 0.0
