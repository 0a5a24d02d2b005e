"""Latent sampling and smoothed latent walks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d


def normalize_rows(z: np.ndarray) -> np.ndarray:
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_latents(
    count: int, latent_size: int, rng: np.random.Generator, normalize: bool = True, dtype=np.float32
) -> np.ndarray:
    """Unit-normal components; each row projected to the unit hypersphere unless ``normalize`` is off."""
    if latent_size < 1:
        raise ValueError("latent_size must be >= 1")
    z = rng.standard_normal((count, latent_size))
    if normalize:
        z = normalize_rows(z)
    return z.astype(dtype)


@dataclass(frozen=True)
class LatentWalkConfig:
    sigma_frames: float = 45.0
    frame_rate: float = 60.0
    latent_size: int = 512

    def __post_init__(self):
        if not self.sigma_frames > 0:
            raise ValueError("sigma_frames must be > 0")


def latent_walk(
    frame_count: int,
    config: LatentWalkConfig = LatentWalkConfig(),
    rng: np.random.Generator | None = None,
    raw: np.ndarray | None = None,
) -> np.ndarray:
    """Per-frame normal latents, Gaussian-blurred across time, then normalized.

    The temporal kernel is truncated at 3 sigma with reflected edges.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if raw is None:
        rng = rng if rng is not None else np.random.default_rng()
        raw = rng.standard_normal((frame_count, config.latent_size))
    smooth = gaussian_filter1d(raw, config.sigma_frames, axis=0, mode="reflect", truncate=3.0)
    return normalize_rows(smooth)
