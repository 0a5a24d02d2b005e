"""WGAN-GP (with drift and gamma-scaled penalty) and LSGAN objectives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, current_graph_or_new, grad
from .autodiff import functional as F

LOSS_KINDS = ("wgan-gp", "lsgan")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "wgan-gp"
    gamma: float = 1.0
    penalty_weight: float = 10.0
    drift_weight: float = 0.001
    n_critic: int = 1

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.penalty_weight < 0 or self.drift_weight < 0:
            raise ValueError("penalty_weight and drift_weight must be >= 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")


@dataclass(frozen=True)
class LsganNoiseState:
    d_hat: float = 0.0


Critic = Callable[[Tensor], Tensor]


def interpolate(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Points on the segments between paired real and fake samples (one t per sample)."""
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} differ in shape")
    t = rng.uniform(size=(real.shape[0],) + (1,) * (real.ndim - 1)).astype(real.dtype)
    return real + t * (fake - real)


def gradient_penalty(
    discriminator: Critic,
    real,
    fake,
    config: LossConfig = LossConfig(),
    rng: np.random.Generator | None = None,
    points: np.ndarray | None = None,
) -> Tensor:
    """penalty_weight * mean((||grad_x D(x)|| - gamma)^2 / gamma^2) at interpolates.

    Differentiable with respect to the discriminator's parameters.  ``points``
    overrides the random interpolates.
    """
    if points is None:
        real_a = real.data if isinstance(real, Tensor) else np.asarray(real)
        fake_a = fake.data if isinstance(fake, Tensor) else np.asarray(fake)
        points = interpolate(real_a, fake_a, rng if rng is not None else np.random.default_rng())
    with current_graph_or_new():
        x_hat = Tensor(points, requires_grad=True)
        scores = discriminator(x_hat)
        (gx,) = grad(F.sum(scores), [x_hat], create_graph=True)
        norms = F.l2norm(gx, range(1, gx.ndim))
        residual = F.add_scalar(norms, -config.gamma)
        per_sample = F.scale(residual * residual, 1.0 / config.gamma**2)
        return F.scale(F.mean(per_sample), config.penalty_weight)


def wgan_discriminator_loss(
    discriminator: Critic,
    real: Tensor,
    fake: Tensor,
    config: LossConfig = LossConfig(),
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, dict[str, float]]:
    with current_graph_or_new():
        d_real = discriminator(real)
        d_fake = discriminator(fake)
        wdist = F.mean(d_fake) - F.mean(d_real)
        loss = wdist
        gp = None
        if config.penalty_weight > 0:
            gp = gradient_penalty(discriminator, real, fake, config, rng)
            loss = loss + gp
        drift = F.scale(F.mean(d_real * d_real), config.drift_weight)
        if config.drift_weight > 0:
            loss = loss + drift
    parts = {
        "wdist": wdist.item(),
        "penalty": 0.0 if gp is None else gp.item(),
        "drift": drift.item(),
        "d_real": float(d_real.data.mean()),
    }
    return loss, parts


def wgan_generator_loss(discriminator: Critic, fake: Tensor) -> Tensor:
    with current_graph_or_new():
        return F.neg(F.mean(discriminator(fake)))


def wgan_gp_losses(
    discriminator: Critic,
    generator: Callable[[Tensor], Tensor],
    real: Tensor,
    latents: Tensor,
    config: LossConfig = LossConfig(),
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """(d_loss, g_loss) recorded in one graph; take gradients with ``retain_graph``."""
    if config.kind != "wgan-gp":
        raise ValueError("wgan_gp_losses needs config.kind == 'wgan-gp'")
    with current_graph_or_new():
        fake = generator(latents)
        d_loss, _ = wgan_discriminator_loss(discriminator, real, fake, config, rng)
        g_loss = F.neg(F.mean(discriminator(fake)))
    return d_loss, g_loss


def lsgan_discriminator_loss(discriminator: Critic, real: Tensor, fake: Tensor) -> tuple[Tensor, dict[str, float]]:
    with current_graph_or_new():
        d_real = discriminator(real)
        d_fake = discriminator(fake)
        r = F.add_scalar(d_real, -1.0)
        loss = F.scale(F.mean(r * r) + F.mean(d_fake * d_fake), 0.5)
    return loss, {"d_real": float(d_real.data.mean()), "d_fake": float(d_fake.data.mean())}


def lsgan_generator_loss(discriminator: Critic, fake: Tensor) -> Tensor:
    with current_graph_or_new():
        r = F.add_scalar(discriminator(fake), -1.0)
        return F.scale(F.mean(r * r), 0.5)


def lsgan_losses(
    discriminator: Critic,
    generator: Callable[[Tensor], Tensor],
    real: Tensor,
    latents: Tensor,
) -> tuple[Tensor, Tensor]:
    with current_graph_or_new():
        fake = generator(latents)
        d_loss, _ = lsgan_discriminator_loss(discriminator, real, fake)
        g_loss = lsgan_generator_loss(discriminator, fake)
    return d_loss, g_loss


def adaptive_noise_magnitude(state: LsganNoiseState, d: float) -> tuple[float, LsganNoiseState]:
    """Update the output average and return 0.2 * max(0, d_hat - 0.5)^2."""
    d_hat = 0.1 * d + 0.9 * state.d_hat
    return 0.2 * max(0.0, d_hat - 0.5) ** 2, LsganNoiseState(d_hat)
