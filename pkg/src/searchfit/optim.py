"""Adam optimizer state/step and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tape, Tensor, backward


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the shared knobs."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], learning_rate: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.values) for p in params],
            second_moment=[np.zeros_like(p.values) for p in params],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One Adam update with bias correction, applied in place to the params."""
    if len(state.first_moment) != len(params):
        raise ContractError(
            f"AdamState tracks {len(state.first_moment)} params, got {len(params)}"
        )
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} has no gradient; run backward first")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must be a deterministic scalar-valued closure over ``params``
    (dropout disabled). Returns the max over all parameter entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    first = f().item()
    second = f().item()
    if first != second:
        raise ContractError(
            "grad_check requires a deterministic function; two evaluations differed "
            "(is dropout still enabled?)"
        )

    zero_grads(params)
    with Tape() as tape:
        out = f()
    backward(out, tape)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    max_err = 0.0
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = f().item()
            flat[j] = orig - step
            f_minus = f().item()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(a_flat[j]), abs(numeric), 1e-8)
            err = abs(a_flat[j] - numeric) / denom
            if err > max_err:
                max_err = err
    return max_err
