"""Adam with standard defaults, and the cosine learning-rate schedule.

The update rule (pinned by the scalar oracle test in the suite):

    m <- b1*m + (1-b1)*g          mhat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2        vhat = v / (1 - b2^t)
    theta <- theta - lr * mhat / (sqrt(vhat) + eps)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_init(flat_params: dict) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in flat_params.items()},
                     v={k: np.zeros_like(v) for k, v in flat_params.items()})


def adam_step(flat_params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = ADAM_EPS) -> None:
    """One in-place update of every array in ``flat_params``.

    Missing gradients are treated as zero so ablated (unused) parameters
    stay on a well-defined trajectory.
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, p in flat_params.items():
        g = grads.get(k)
        m, v = state.m[k], state.v[k]
        if g is None:
            m *= beta1
            v *= beta2
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


def cosine_lr(step: int, total_steps: int, eta0: float, eta_min: float = 1e-6) -> float:
    """Cosine annealing from eta0 (step 0) to eta_min (step total_steps)."""
    if step < 0 or step > total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return eta0
    return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + math.cos(math.pi * step / total_steps))
