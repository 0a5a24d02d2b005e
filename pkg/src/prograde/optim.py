"""Adam on raw (pre-scaling) weights and the generator weight average."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError, Tensor


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    epsilon: float = 1e-8


BASELINE_OPTIMIZER = OptimizerConfig(learning_rate=0.0001, beta1=0.0, beta2=0.9)


@dataclass(frozen=True)
class EmaConfig:
    decay: float = 0.999


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    moments: tuple[np.ndarray, np.ndarray],
    config: OptimizerConfig,
    step_index: int,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One bias-corrected Adam update; returns the new parameter and moments."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    if param.shape != grad.shape:
        raise ValueError(f"parameter {param.shape} and gradient {grad.shape} differ")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    dt = param.dtype.type
    m, v = moments
    m = dt(config.beta1) * m + dt(1 - config.beta1) * grad
    v = dt(config.beta2) * v + dt(1 - config.beta2) * (grad * grad)
    m_hat = m / dt(1 - config.beta1**step_index)
    v_hat = v / dt(1 - config.beta2**step_index)
    new = param - dt(config.learning_rate) * m_hat / (np.sqrt(v_hat) + dt(config.epsilon))
    return new.astype(param.dtype), (m, v)


class Adam:
    """Named-parameter Adam with per-parameter step counters.

    Parameters that appear later (a newly grown block) start with zero
    moments and their own step count.
    """

    def __init__(self, config: OptimizerConfig = OptimizerConfig()):
        self.config = config
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}
        self.updates = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            self.t[name] += 1
            p.data, (self.m[name], self.v[name]) = adam_step(
                p.data, g, (self.m[name], self.v[name]), self.config, self.t[name]
            )
        self.updates += 1

    def prune(self, names) -> None:
        for name in list(self.m):
            if name not in names:
                del self.m[name], self.v[name], self.t[name]


def ema_update(ema: dict[str, np.ndarray], current: dict[str, np.ndarray], config: EmaConfig = EmaConfig()) -> dict[str, np.ndarray]:
    """ema + (1 - decay) * (current - ema); parameters new to ``ema`` enter at their current value."""
    out = {}
    for name, cur in current.items():
        prev = ema.get(name)
        if prev is None:
            out[name] = np.array(cur, copy=True)
            continue
        if prev.shape != cur.shape:
            raise ValueError(f"{name}: shape {prev.shape} != {cur.shape}")
        out[name] = (prev + prev.dtype.type(1 - config.decay) * (cur - prev)).astype(prev.dtype)
    return out
