"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, NonFiniteError, Tensor, no_grad


def _evaluate(fn, arrays):
    with no_grad():
        out = fn(*[Tensor(a) for a in arrays])
    value = float(np.asarray(out.data).reshape(()))
    if not np.isfinite(value):
        raise NonFiniteError("function evaluated to a non-finite value")
    return value


def analytic_gradients(fn: Callable[..., Tensor], point: Sequence[np.ndarray]) -> list[np.ndarray]:
    params = [Tensor(np.array(p, copy=True), requires_grad=True) for p in point]
    with Graph() as g:
        out = fn(*params)
    return [t.data for t in g.grad(out, params)]


def gradient_check(
    fn: Callable[..., Tensor],
    point: Sequence[np.ndarray],
    step: float = 1e-4,
    floor: float = 1e-8,
    gradients: Sequence[np.ndarray] | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` maps tensors to a scalar tensor.  Relative error per entry is
    ``|a - n| / max(|a|, |n|, floor)``.  ``gradients`` overrides the analytic
    side, which is how a corrupted backward rule can be probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = [np.array(p, dtype=np.asarray(p).dtype, copy=True) for p in point]
    analytic = gradients if gradients is not None else analytic_gradients(fn, point)
    worst = 0.0
    for i, base in enumerate(point):
        flat = base.reshape(-1)
        ana = np.asarray(analytic[i]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = _evaluate(fn, point)
            flat[j] = orig - step
            fm = _evaluate(fn, point)
            flat[j] = orig
            num = (fp - fm) / (2 * step)
            denom = max(abs(ana[j]), abs(num), floor)
            worst = max(worst, abs(ana[j] - num) / denom)
    return worst
