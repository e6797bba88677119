"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .tensor import ArrayLike, Tensor, record_and_backward

GradcheckFn = Callable[..., Tensor]


@dataclass(frozen=True)
class GradcheckReport:
    """Outcome of a gradient check.

    ``worst`` names the parameter and coordinate with the largest relative error, ``checked`` counts the
    coordinates compared.
    """

    passed: bool
    max_relative_error: float
    worst: Optional[Tuple[str, Tuple[int, ...]]]
    checked: int
    tolerance: float

    def __bool__(self) -> bool:
        return self.passed


def finite_difference_gradcheck(
    f: GradcheckFn,
    point: Union[ArrayLike, Mapping[str, ArrayLike]],
    h: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-4,
    max_coordinates: Optional[int] = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compares the tape gradient of a scalar function against central finite differences.

    The relative error of a coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the
    floor keeps coordinates whose true gradient is (close to) zero from dividing rounding noise by zero.

    Args:
        f: Scalar function. Called with a single tensor when ``point`` is an array, or with a dictionary of
            named tensors when ``point`` is a mapping.
        point: The point at which the gradient is checked.
        h: Step of the central difference ``(f(x + h) - f(x - h)) / 2h``.
        tolerance: Largest accepted relative error.
        floor: Lower bound of the relative error denominator.
        max_coordinates: If set, only this many randomly chosen coordinates (per parameter) are compared.
        seed: Seed of the coordinate sampling.

    Returns:
        A report; the check does not raise on failure. A perturbed evaluation that raises an ``ArithmeticError``
        (such as ``NonFiniteError``) counts as an infinite error at that coordinate.

    Examples:
        >>> finite_difference_gradcheck(lambda x: (x * x).sum(), np.array([1.0, -2.0])).passed
        True
    """
    single = not isinstance(point, Mapping)
    values: Dict[str, np.ndarray] = (
        {"x": np.array(point, dtype=np.float64)}
        if single
        else {name: np.array(value, dtype=np.float64) for name, value in point.items()}  # type: ignore[union-attr]
    )

    def call(tensors: Dict[str, Tensor]) -> Tensor:
        return f(tensors["x"]) if single else f(tensors)

    def evaluate(candidate: Dict[str, np.ndarray]) -> float:
        # a perturbed point outside the domain of f fails its coordinate
        try:
            return call({name: Tensor(value) for name, value in candidate.items()}).item()
        except ArithmeticError:
            return math.nan

    _, analytic = record_and_backward(call, values)

    rng = np.random.default_rng(seed)
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    max_error = 0.0
    checked = 0
    for name, value in values.items():
        coordinates = np.arange(value.size)
        if max_coordinates is not None and value.size > max_coordinates:
            coordinates = np.sort(rng.choice(value.size, size=max_coordinates, replace=False))
        for flat in coordinates:
            index = tuple(int(i) for i in np.unravel_index(int(flat), value.shape))
            shifted = dict(values)
            plus = value.copy()
            plus[index] += h
            minus = value.copy()
            minus[index] -= h
            shifted[name] = plus
            upper = evaluate(shifted)
            shifted[name] = minus
            lower = evaluate(shifted)
            numeric = (upper - lower) / (2.0 * h)
            exact = float(analytic[name][index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            checked += 1
            if not math.isfinite(error) or error > max_error or worst is None:
                max_error = error if math.isfinite(error) else math.inf
                worst = (name, index)

    return GradcheckReport(
        passed=max_error <= tolerance, max_relative_error=max_error, worst=worst, checked=checked, tolerance=tolerance
    )


__all__ = [
    "GradcheckReport",
    "finite_difference_gradcheck",
]
