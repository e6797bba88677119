"""Adam optimizer over named parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Tuple

import numpy as np

from .exceptions import ShapeError


@dataclass(frozen=True)
class AdamState:
    """Moment estimates and step counter of the Adam optimizer.

    ``m`` and ``v`` mirror the parameter shapes; ``t`` counts the steps taken so far.
    """

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initial(
        cls,
        params: Mapping[str, np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> AdamState:
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ValueError(f"invalid Adam hyperparameters: lr={lr} beta1={beta1} beta2={beta2} eps={eps}")
        return cls(
            m={name: np.zeros(np.shape(value)) for name, value in params.items()},
            v={name: np.zeros(np.shape(value)) for name, value in params.items()},
            t=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Applies one bias-corrected Adam update.

    Args:
        params: The current parameter values, keyed by name.
        grads: The gradients, keyed like ``params`` and of the same shapes.
        state: The optimizer state of the previous step.

    Returns:
        A tuple of the updated parameters and the new optimizer state (``t`` incremented by one). The inputs are
        left unchanged.

    Raises:
        ShapeError: If the gradient or state keys and shapes do not mirror the parameters.

    Examples:
        >>> state = AdamState.initial({"w": np.zeros(1)})
        >>> params, state = adam_step({"w": np.zeros(1)}, {"w": np.ones(1)}, state)
        >>> params["w"], state.t
        (array([-0.001]), 1)
    """
    if set(grads) != set(params) or set(state.m) != set(params):
        raise ShapeError("adam_step: gradient and optimizer state keys must match the parameter keys")

    t = state.t + 1
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    updated: Dict[str, np.ndarray] = {}
    m: Dict[str, np.ndarray] = {}
    v: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != np.shape(value) or state.m[name].shape != grad.shape:
            raise ShapeError(f"adam_step: gradient of '{name}' has shape {grad.shape}, parameter {np.shape(value)}")
        m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        updated[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    return updated, replace(state, m=m, v=v, t=t)


__all__ = [
    "AdamState",
    "adam_step",
]
