"""Multi-scale sliced Wasserstein distance and the discrete mode-coverage test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class SwdConfig:
    images_per_set: int = 1024
    patches_per_image: int = 128
    projections: int = 128
    base_resolution: int = 16
    patch_size: int = 7

    def __post_init__(self):
        for name in ("images_per_set", "patches_per_image", "projections", "base_resolution", "patch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd")


PAPER_SWD = SwdConfig(images_per_set=16384, patches_per_image=128, projections=512)


@dataclass
class PatchSet:
    level: int
    descriptors: np.ndarray  # (n, channels * patch * patch), channel-major
    channels: int = 3

    def __len__(self):
        return self.descriptors.shape[0]


# -- Laplacian pyramid -------------------------------------------------------


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, BINOMIAL5, axis=-1, mode="mirror")
    return convolve1d(out, BINOMIAL5, axis=-2, mode="mirror")


def pyr_down(img: np.ndarray) -> np.ndarray:
    return _blur(img)[..., ::2, ::2]


def pyr_up(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2:]
    up = np.zeros(img.shape[:-2] + (2 * h, 2 * w), dtype=img.dtype)
    up[..., ::2, ::2] = img
    return _blur(up) * 4.0


def laplacian_pyramid(image: np.ndarray, base_resolution: int = 16) -> list[np.ndarray]:
    """Levels ordered coarse to fine: low-pass base first, then band-pass differences.

    Works on ``(..., R, R)`` arrays, so a batch of images is decomposed at once.
    """
    r = image.shape[-1]
    ratio = r / base_resolution
    if image.shape[-2] != r or ratio < 1 or not float(ratio).is_integer() or int(ratio) & (int(ratio) - 1):
        raise ValueError(f"resolution {image.shape[-2:]} is not a power-of-two multiple of {base_resolution}")
    gaussians = [np.asarray(image, dtype=np.float64)]
    while gaussians[-1].shape[-1] > base_resolution:
        gaussians.append(pyr_down(gaussians[-1]))
    levels = [gaussians[-1]]
    for fine, coarse in zip(reversed(gaussians[:-1]), reversed(gaussians[1:])):
        levels.append(fine - pyr_up(coarse))
    return levels


def reconstruct_pyramid(levels: list[np.ndarray]) -> np.ndarray:
    img = levels[0]
    for band in levels[1:]:
        img = pyr_up(img) + band
    return img


# -- descriptors -------------------------------------------------------------


def extract_descriptors(
    images: np.ndarray, config: SwdConfig, rng: np.random.Generator, level: int | None = None
) -> PatchSet:
    """Random fully-inside patches, ``patches_per_image`` from each image.

    ``images`` is one pyramid level for a set, shape (N, C, R, R).
    """
    n, c, h, w = images.shape
    p = config.patch_size
    if h < p or w < p:
        raise ValueError(f"level {h}x{w} is smaller than the {p}x{p} patch")
    k = config.patches_per_image
    ys = rng.integers(0, h - p + 1, size=(n, k))
    xs = rng.integers(0, w - p + 1, size=(n, k))
    offs = np.arange(p)
    rows = (ys[:, :, None] + offs)[:, :, None, :, None]  # n,k,1,p,1
    cols = (xs[:, :, None] + offs)[:, :, None, None, :]  # n,k,1,1,p
    idx_n = np.arange(n)[:, None, None, None, None]
    idx_c = np.arange(c)[None, None, :, None, None]
    patches = images[idx_n, idx_c, rows, cols]  # n,k,c,p,p
    return PatchSet(level if level is not None else h, patches.reshape(n * k, c * p * p), c)


def _normalize(ps: PatchSet) -> PatchSet:
    d = ps.descriptors.reshape(len(ps), ps.channels, -1)
    mean = d.mean(axis=(0, 2), keepdims=True)
    std = d.std(axis=(0, 2), keepdims=True)
    std = np.where(std < SIGMA_FLOOR, 1.0, std)
    return PatchSet(ps.level, ((d - mean) / std).reshape(len(ps), -1), ps.channels)


def normalize_descriptors(a: PatchSet, b: PatchSet) -> tuple[PatchSet, PatchSet]:
    """Per-channel standardization, each set with its own statistics."""
    if a.level != b.level:
        raise ValueError(f"descriptor sets come from different levels ({a.level} vs {b.level})")
    return _normalize(a), _normalize(b)


def random_directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sliced_wasserstein(
    a,
    b,
    projections: int = 128,
    rng: np.random.Generator | None = None,
    directions: np.ndarray | None = None,
    chunk: int = 32,
) -> float:
    """Mean over random unit directions of the sorted-matching 1D transport cost."""
    xa = a.descriptors if isinstance(a, PatchSet) else np.asarray(a, dtype=np.float64)
    xb = b.descriptors if isinstance(b, PatchSet) else np.asarray(b, dtype=np.float64)
    if xa.ndim == 1:
        xa, xb = xa[:, None], xb[:, None]
    if xa.shape != xb.shape:
        raise ValueError(f"descriptor sets differ: {xa.shape} vs {xb.shape}")
    if directions is None:
        rng = rng if rng is not None else np.random.default_rng()
        directions = random_directions(projections, xa.shape[1], rng)
    directions = np.atleast_2d(directions)
    total = 0.0
    for start in range(0, len(directions), chunk):
        d = directions[start : start + chunk].T
        pa = np.sort(xa @ d, axis=0)
        pb = np.sort(xb @ d, axis=0)
        total += np.abs(pa - pb).mean(axis=0).sum()
    return float(total / len(directions))


@dataclass
class SwdReport:
    levels: list[int]
    distances: list[float]  # raw, per level coarse to fine
    scale: float = 1e3

    @property
    def average(self) -> float:
        return float(np.mean(self.distances))

    @property
    def scaled(self) -> list[float]:
        return [d * self.scale for d in self.distances]

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [(str(lv), d * self.scale) for lv, d in zip(self.levels, self.distances)]
        rows.append(("avg", self.average * self.scale))
        return rows


def swd_report(
    real: np.ndarray,
    fake: np.ndarray,
    config: SwdConfig = SwdConfig(),
    rng: np.random.Generator | None = None,
) -> SwdReport:
    """Per-level SWD between two image sets (N, 3, R, R); values reported x1e3."""
    if real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"image sets differ in shape: {real.shape} vs {fake.shape}")
    rng = rng if rng is not None else np.random.default_rng()
    n = min(len(real), len(fake), config.images_per_set)
    pr = laplacian_pyramid(real[:n], config.base_resolution)
    pf = laplacian_pyramid(fake[:n], config.base_resolution)
    levels, dists = [], []
    for lr, lf in zip(pr, pf):
        res = lr.shape[-1]
        # same patch positions in both sets, so identical sets give exactly 0
        pos_seed = int(rng.integers(2**63))
        a = extract_descriptors(lr, config, np.random.default_rng(pos_seed), res)
        b = extract_descriptors(lf, config, np.random.default_rng(pos_seed), res)
        a, b = normalize_descriptors(a, b)
        levels.append(res)
        dists.append(sliced_wasserstein(a, b, config.projections, rng))
    return SwdReport(levels, dists)


# -- mode coverage -----------------------------------------------------------


def mode_coverage(labels, total_modes: int = 1000) -> tuple[int, float]:
    """(distinct modes hit, KL(histogram || uniform)) with natural log."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("labels must be non-empty")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= total_modes:
        raise ValueError(f"labels must lie in [0, {total_modes - 1}]")
    counts = np.bincount(labels, minlength=total_modes)
    hit = counts[counts > 0]
    n = labels.size
    kl = float(np.sum(hit / n * np.log(hit * total_modes / n)))
    return int(hit.size), kl
