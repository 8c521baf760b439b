"""Finite-difference gradient verification.

The numeric side never touches the tape: it re-runs the forward function
with perturbed raw arrays under ``no_grad`` and central-differences the
scalar output.  Checks are meant to run under wide (float64) precision;
``check`` switches to it by itself.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T


def numeric_gradient(f, x: np.ndarray, h: float | None = None) -> np.ndarray:
    """Central differences of scalar-valued ``f()`` w.r.t. array ``x``.

    ``f`` must re-read ``x`` on every call (hold a reference, not a copy).
    """
    if h is None:
        h = float(np.finfo(x.dtype).eps) ** (1.0 / 3.0)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        step = h * max(1.0, abs(float(old)))
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def check(build, arrays, h: float | None = None) -> float:
    """Worst relative error between tape and numeric gradients.

    ``build(*tensors)`` must return a scalar Tensor and be deterministic.
    ``arrays`` are the float64 inputs to differentiate with respect to.
    """
    with T.precision("wide"):
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
        loss = build(*tensors)
        loss.backward()
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(a)
                    for t, a in zip(tensors, arrays)]

        def f():
            with T.no_grad():
                return float(build(*[T.Tensor(x) for x in arrays]).array)

        worst = 0.0
        for i, a in enumerate(arrays):
            num = numeric_gradient(f, a, h)
            worst = max(worst, relative_error(analytic[i], num))
    return worst
