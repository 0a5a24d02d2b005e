"""Mechanism layers: pixelnorm, minibatch stddev, equalized learning rate, fade-in."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, get_default_dtype
from .autodiff import functional as F


@dataclass(frozen=True)
class PixelnormConfig:
    epsilon: float = 1e-8


@dataclass
class FadeState:
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def advance(self, alpha: float) -> None:
        """Move alpha forward; it never decreases within a fade phase."""
        if alpha < self.alpha:
            raise ValueError(f"alpha may not decrease ({self.alpha} -> {alpha})")
        if alpha > 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = alpha


def pixelnorm(x: Tensor, config: PixelnormConfig = PixelnormConfig()) -> Tensor:
    """Scale each pixel's feature vector to unit mean square over channels."""
    ms = F.mean(x * x, axis=1, keepdims=True)
    return x * F.rsqrt(F.add_scalar(ms, config.epsilon))


def minibatch_stddev(x: Tensor) -> Tensor:
    """Append one constant feature map holding the average batch stddev.

    The population standard deviation is taken per (feature, location) over
    the batch, then averaged over features and locations into one scalar.
    A zero-variance location contributes exactly 0 and a zero gradient.
    """
    b, _, h, w = x.shape
    # shifting by the first sample keeps identical batches exactly zero
    # (a float mean of identical values need not reproduce them)
    shifted = x - F.broadcast_to(F.slice_axis(x, 0, 0, 1), x.shape)
    centered = shifted - F.mean(shifted, axis=0, keepdims=True)
    var = F.mean(centered * centered, axis=0, keepdims=True)
    std = F.safe_sqrt(var)
    avg = F.mean(std, axis=(1, 2, 3), keepdims=True)
    return F.concat([x, F.broadcast_to(avg, (b, 1, h, w))], axis=1)


def fade_blend(old_path: Tensor, new_path: Tensor, state: FadeState | float) -> Tensor:
    """(1 - alpha) * old + alpha * new."""
    alpha = state.alpha if isinstance(state, FadeState) else float(state)
    if old_path.shape != new_path.shape:
        raise ValueError(f"fade_blend shape mismatch: {old_path.shape} vs {new_path.shape}")
    return F.scale(old_path, 1.0 - alpha) + F.scale(new_path, alpha)


def multiplicative_noise(x: Tensor, magnitude: float, rng: np.random.Generator | None) -> Tensor:
    """x * (1 + magnitude * n) with n ~ N(0, 1) i.i.d. per activation."""
    if magnitude == 0.0 or rng is None:
        return x
    n = rng.standard_normal(x.shape).astype(x.dtype)
    return x * Tensor(1.0 + magnitude * n, dtype=x.dtype)


def he_scale(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


class EqualizedConv2d:
    """Convolution whose weights are unit-normal raw values scaled at runtime.

    With ``equalized=False`` the He constant is folded into the raw weights at
    construction instead and the runtime scale is 1.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        padding: int,
        rng: np.random.Generator,
        equalized: bool = True,
        dtype=None,
    ):
        self.fan_in = in_channels * kernel * kernel
        self.padding = padding
        self.equalized = equalized
        dtype = np.dtype(dtype or get_default_dtype())
        raw = rng.standard_normal((out_channels, in_channels, kernel, kernel))
        if equalized:
            self.scale = he_scale(self.fan_in)
        else:
            raw = raw * he_scale(self.fan_in)
            self.scale = 1.0
        self.weight = Tensor(raw.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def effective_weight(self) -> Tensor:
        if self.scale == 1.0:
            return self.weight
        return F.scale(self.weight, self.scale)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.effective_weight(), self.bias, self.padding)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def equalized_forward(layer: EqualizedConv2d, x: Tensor) -> Tensor:
    return layer(x)


class BatchNorm:
    """Per-channel batch normalization with running statistics for eval mode."""

    def __init__(self, channels: int, momentum: float = 0.9, epsilon: float = 1e-5, dtype=None):
        dtype = np.dtype(dtype or get_default_dtype())
        self.gain = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        c = x.shape[1]
        if training:
            mu = F.mean(x, axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = F.mean(centered * centered, axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mu.data.reshape(c)).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var.data.reshape(c)).astype(x.dtype)
            y = centered * F.rsqrt(F.add_scalar(var, self.epsilon))
        else:
            mu = Tensor(self.running_mean.reshape(1, c, 1, 1))
            inv = 1.0 / np.sqrt(self.running_var.reshape(1, c, 1, 1) + self.epsilon)
            y = (x - mu) * Tensor(inv.astype(x.dtype))
        return y * F.reshape(self.gain, (1, c, 1, 1)) + F.reshape(self.bias, (1, c, 1, 1))

    def parameters(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}


class LayerNorm:
    """Normalize each sample over (C, H, W) with a per-channel affine."""

    def __init__(self, channels: int, epsilon: float = 1e-5, dtype=None):
        dtype = np.dtype(dtype or get_default_dtype())
        self.gain = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.epsilon = epsilon

    def __call__(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        mu = F.mean(x, axis=(1, 2, 3), keepdims=True)
        centered = x - mu
        var = F.mean(centered * centered, axis=(1, 2, 3), keepdims=True)
        y = centered * F.rsqrt(F.add_scalar(var, self.epsilon))
        return y * F.reshape(self.gain, (1, c, 1, 1)) + F.reshape(self.bias, (1, c, 1, 1))

    def parameters(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}
