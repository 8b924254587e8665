"""Central finite-difference gradient checking.

Runs in float64: callers build float64 inputs (see ``using_dtype``) so the
h=1e-5 stencil has ~1e-10 truncation error, far below the tolerances the
tests assert.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Max mixed relative/absolute error between analytic and numeric grads.

    `fn(*inputs)` must return a scalar Tensor and be re-runnable; inputs
    with requires_grad are perturbed elementwise with a central stencil.
    Error per element is |a - n| / max(|a|, |n|, 1).
    """
    loss = fn(*inputs)
    loss.backward()
    analytic = []
    for t in inputs:
        if t.requires_grad:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            analytic.append(np.array(g, copy=True))
        else:
            analytic.append(None)

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        if ana is None:
            continue
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn(*inputs).data)
            flat[i] = orig - h
            f_minus = float(fn(*inputs).data)
            flat[i] = orig
            num[i] = (f_plus - f_minus) / (2.0 * h)
        num = num.reshape(t.data.shape)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1.0)
        worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    return worst
