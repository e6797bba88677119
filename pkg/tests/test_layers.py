import math

import numpy as np
import pytest

from mmdadapt.exceptions import ShapeError
from mmdadapt.gradcheck import finite_difference_gradcheck
from mmdadapt.layers import batchnorm2d, conv2d, conv_output_side, dense, maxpool2d, softmax_cross_entropy
from mmdadapt.tensor import Tensor


def test_conv2d_examples() -> None:
    image = np.arange(1.0, 5.0).reshape(1, 1, 2, 2)
    assert conv2d(Tensor(image), Tensor(np.ones((1, 1, 2, 2)))).data.tolist() == [[[[10.0]]]]

    rng = np.random.default_rng(0)
    batch = rng.normal(size=(2, 3, 5, 5))
    identity = np.zeros((3, 3, 1, 1))
    identity[np.arange(3), np.arange(3)] = 1.0
    assert np.array_equal(conv2d(Tensor(batch), Tensor(identity)).data, batch)


def test_conv2d_matches_direct_loop() -> None:
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 6, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    stride, padding = 2, 1
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh, ow = conv_output_side(6, 3, stride, padding), conv_output_side(5, 3, stride, padding)
    assert out.shape == (2, 3, oh, ow)
    for n in range(2):
        for o in range(3):
            for i in range(oh):
                for j in range(ow):
                    window = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                    assert out[n, o, i, j] == pytest.approx(float((window * w[o]).sum() + b[o]), abs=1e-12)


def test_conv2d_errors() -> None:
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=0)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_gradcheck(stride: int, padding: int) -> None:
    rng = np.random.default_rng(stride * 10 + padding)
    point = {"x": rng.normal(size=(2, 2, 5, 5)), "w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3)}
    upstream = rng.normal(size=(2, 3, conv_output_side(5, 3, stride, padding), conv_output_side(5, 3, stride, padding)))

    def f(t: dict) -> Tensor:
        return (conv2d(t["x"], t["w"], t["b"], stride=stride, padding=padding) * upstream).sum()

    report = finite_difference_gradcheck(f, point)
    assert report.passed, report


def test_maxpool2d_examples() -> None:
    assert maxpool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2).data.tolist() == [[[[4.0]]]]
    constant = maxpool2d(Tensor(np.full((1, 2, 4, 4), 0.5)), 2)
    assert constant.shape == (1, 2, 2, 2)
    assert np.all(constant.data == 0.5)
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.ones((1, 1, 2, 2))), 3)


def test_maxpool2d_ties_route_to_first_position() -> None:
    from mmdadapt.tensor import record_and_backward

    _, grads = record_and_backward(lambda t: maxpool2d(t["x"], 2).sum(), {"x": np.ones((1, 1, 2, 2))})
    assert grads["x"].tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


def test_maxpool2d_gradcheck() -> None:
    rng = np.random.default_rng(3)
    x = rng.permutation(np.arange(2 * 2 * 6 * 6, dtype=np.float64)).reshape(2, 2, 6, 6) / 10.0
    upstream = rng.normal(size=(2, 2, 2, 2))
    report = finite_difference_gradcheck(lambda t: (maxpool2d(t, 3, 2) * upstream).sum(), x)
    assert report.passed, report


def test_batchnorm2d_eval_example() -> None:
    result = batchnorm2d(
        Tensor(np.full((1, 1, 1, 1), 7.0)), Tensor([1.0]), Tensor([0.0]), np.array([5.0]), np.array([4.0]), "eval"
    )
    assert result.output.item() == pytest.approx(2.0 / math.sqrt(4.0 + 1e-5), abs=1e-12)
    assert result.running_mean.tolist() == [5.0]
    assert result.running_var.tolist() == [4.0]


def test_batchnorm2d_train_statistics() -> None:
    x = np.stack([np.full((1, 2, 2), 1.0), np.full((1, 2, 2), 3.0)])
    result = batchnorm2d(Tensor(x), Tensor([1.0]), Tensor([0.0]), np.zeros(1), np.ones(1), "train")
    assert result.output.data.mean() == pytest.approx(0.0, abs=1e-12)
    assert result.running_mean.tolist() == pytest.approx([0.2])
    assert result.running_var.tolist() == pytest.approx([0.9 + 0.1 * 1.0])

    constant = batchnorm2d(Tensor(np.full((2, 1, 2, 2), 4.0)), Tensor([1.0]), Tensor([0.0]), np.zeros(1), np.ones(1))
    assert np.allclose(constant.output.data, 0.0)

    with pytest.raises(ValueError):
        batchnorm2d(Tensor(np.ones((1, 1, 2, 2))), Tensor([1.0]), Tensor([0.0]), np.zeros(1), np.ones(1), "train")
    with pytest.raises(ValueError):
        batchnorm2d(Tensor(np.ones((2, 1, 2, 2))), Tensor([1.0]), Tensor([0.0]), np.zeros(1), np.ones(1), "test")


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm2d_gradcheck(mode: str) -> None:
    rng = np.random.default_rng(4)
    point = {"x": rng.normal(size=(3, 2, 3, 3)), "gamma": rng.normal(size=2), "beta": rng.normal(size=2)}
    mean, var = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)
    upstream = rng.normal(size=(3, 2, 3, 3))

    def f(t: dict) -> Tensor:
        return (batchnorm2d(t["x"], t["gamma"], t["beta"], mean, var, mode).output * upstream).sum()

    report = finite_difference_gradcheck(f, point)
    assert report.passed, report


def test_dense_examples() -> None:
    assert dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [1.0, 1.0]]), Tensor([1.0, 1.0])).data.tolist() == [
        [4.0, 3.0]
    ]
    x = np.array([[1.5, -2.0], [0.0, 3.0]])
    assert dense(Tensor(x), Tensor(np.eye(2)), Tensor(np.zeros(2))).data.tolist() == x.tolist()
    assert dense(Tensor(x), Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0])).data.tolist() == [[1.0, 2.0, 3.0]] * 2
    with pytest.raises(ShapeError):
        dense(Tensor(x), Tensor(np.zeros((3, 3))), Tensor(np.zeros(3)))


def test_dense_gradcheck() -> None:
    rng = np.random.default_rng(5)
    point = {"x": rng.normal(size=(4, 3)), "w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
    report = finite_difference_gradcheck(lambda t: (dense(t["x"], t["w"], t["b"]).relu() * 1.5).sum(), point)
    assert report.passed, report


def test_softmax_cross_entropy_examples() -> None:
    assert softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2.0), abs=1e-12)
    assert softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)
    assert softmax_cross_entropy(Tensor([[2.0, 0.0]]), [1]).item() == pytest.approx(2.126928011042973, abs=1e-12)
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor([[0.0, 0.0]]), [2])
    with pytest.raises(ShapeError):
        softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0, 1])


def test_softmax_cross_entropy_gradcheck() -> None:
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(5, 2)) * 3.0
    report = finite_difference_gradcheck(lambda t: softmax_cross_entropy(t, [0, 1, 1, 0, 1]), logits)
    assert report.passed, report
