"""Central-difference gradient verification.

The analytic gradients produced by :mod:`depthdehaze.autodiff` are checked
against float64 central differences.  This is the independent oracle for every
differentiable component in the package and is deliberately unaware of how the
forward passes are implemented.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor

DEFAULT_STEP = 1e-5


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                     coords, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of a scalar function at selected flat coordinates."""
    flat = x.reshape(-1)
    out = np.zeros(len(coords))
    for n, c in enumerate(coords):
        keep = flat[c]
        flat[c] = keep + h
        fp = fn(x)
        flat[c] = keep - h
        fm = fn(x)
        flat[c] = keep
        out[n] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss: Callable[..., Tensor],
                    inputs: Mapping[str, np.ndarray],
                    n_coords: int = 24,
                    h: float = DEFAULT_STEP,
                    seed: int = 0) -> float:
    """Max relative error between analytic and numeric gradients.

    ``build_loss`` receives one :class:`Tensor` keyword argument per entry of
    ``inputs`` and must return a scalar tensor.  All inputs are promoted to
    float64; ``n_coords`` coordinates per input are probed (all of them when
    the input is smaller).
    """
    arrays = {k: np.asarray(v, dtype=np.float64).copy() for k, v in inputs.items()}
    tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss = build_loss(**tensors)
    if loss.size != 1:
        raise ValueError("build_loss must return a scalar")
    loss.backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in arrays.items():
        grad = tensors[name].grad
        if grad is None:
            grad = np.zeros_like(arr)
        n = min(n_coords, arr.size)
        coords = rng.choice(arr.size, size=n, replace=False)

        def fn(_x, _name=name):
            vals = {k: Tensor(v) for k, v in arrays.items()}
            return float(build_loss(**vals).data)

        num = numeric_gradient(fn, arr, coords, h=h)
        ana = grad.reshape(-1)[coords]
        worst = max(worst, relative_error(ana, num))
    return worst
