"""Training images: ingestion, synthetic shapes, box-filtered levels and batching."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def to_unit_range(pixels: np.ndarray, dtype=np.float32) -> np.ndarray:
    """8-bit values to [-1, 1]."""
    return (np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0).astype(dtype)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[-1, 1] to 8-bit: round(127.5 * (v + 1)) clamped to [0, 255]."""
    return np.clip(np.round(127.5 * (np.asarray(values, dtype=np.float64) + 1.0)), 0, 255).astype(np.uint8)


def box_downsample(images: np.ndarray, factor: int = 2) -> np.ndarray:
    """Mean over non-overlapping ``factor`` x ``factor`` blocks of (..., H, W) arrays."""
    h, w = images.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"{h}x{w} is not divisible by {factor}")
    blocks = images.reshape(images.shape[:-2] + (h // factor, factor, w // factor, factor))
    return blocks.mean(axis=(-3, -1)).astype(images.dtype)


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write a (3, H, W) image in [-1, 1] as an 8-bit PNG."""
    Image.fromarray(to_uint8(image).transpose(1, 2, 0)).save(path)


def load_png(path: str | Path, dtype=np.float32) -> np.ndarray:
    with Image.open(path) as im:
        return to_unit_range(np.asarray(im.convert("RGB")).transpose(2, 0, 1), dtype)


def image_grid(images: np.ndarray, columns: int | None = None) -> np.ndarray:
    """Tile (N, 3, H, W) into one (3, rows*H, columns*W) image, row-major."""
    n, c, h, w = images.shape
    cols = columns or int(np.ceil(np.sqrt(n)))
    rows = -(-n // cols)
    grid = np.full((c, rows * h, cols * w), -1.0, dtype=images.dtype)
    for i, img in enumerate(images):
        r, q = divmod(i, cols)
        grid[:, r * h : (r + 1) * h, q * w : (q + 1) * w] = img
    return grid


def load_image_dir(path: str | Path, resolution: int, dtype=np.float32) -> np.ndarray:
    """All images in a directory (sorted by name), box-resized to ``resolution``."""
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images in {path}")
    out = np.empty((len(files), 3, resolution, resolution), dtype=dtype)
    for i, f in enumerate(files):
        with Image.open(f) as im:
            im = im.convert("RGB")
            if im.size != (resolution, resolution):
                im = im.resize((resolution, resolution), Image.Resampling.BOX)
            out[i] = to_unit_range(np.asarray(im).transpose(2, 0, 1), dtype)
    return out


SHAPES = ("disc", "square", "triangle", "ring")


def synthetic_shapes(count: int, resolution: int, rng: np.random.Generator, supersample: int = 4, dtype=np.float32) -> np.ndarray:
    """Procedural images: one colored shape on a random flat background.

    Shapes are drawn at ``supersample`` times the resolution and box-reduced,
    which anti-aliases the edges.
    """
    s = resolution * supersample
    coords = (np.arange(s) + 0.5) / s
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    out = np.empty((count, 3, resolution, resolution), dtype=dtype)
    for i in range(count):
        bg = rng.uniform(-1.0, 0.2, size=3)
        fg = rng.uniform(-0.2, 1.0, size=3)
        kind = SHAPES[rng.integers(len(SHAPES))]
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        size = rng.uniform(0.15, 0.3)
        dy, dx = yy - cy, xx - cx
        if kind == "disc":
            mask = dy * dy + dx * dx <= size * size
        elif kind == "ring":
            rr = dy * dy + dx * dx
            mask = (rr <= size * size) & (rr >= (0.55 * size) ** 2)
        elif kind == "square":
            theta = rng.uniform(0, np.pi / 2)
            u = np.cos(theta) * dx + np.sin(theta) * dy
            v = -np.sin(theta) * dx + np.cos(theta) * dy
            mask = (np.abs(u) <= size * 0.85) & (np.abs(v) <= size * 0.85)
        else:
            mask = (dy <= size * 0.7) & (dy >= -size) & (np.abs(dx) <= (dy + size) * 0.6)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        out[i] = box_downsample(img, supersample)
    return out


class ImageDataset:
    """Full-resolution images with precomputed box-filtered lower levels.

    Batches come from a per-epoch shuffle driven by the caller's RNG stream;
    exhausting an epoch reshuffles and wraps.
    """

    def __init__(self, images: np.ndarray, mirror: bool = False):
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != images.shape[3]:
            raise ValueError(f"expected (N, 3, R, R) images, got {images.shape}")
        r = images.shape[-1]
        if r < 4 or r & (r - 1):
            raise ValueError(f"resolution {r} is not a power of two >= 4")
        if images.min() < -1.0 or images.max() > 1.0:
            raise ValueError("images must lie in [-1, 1]")
        self.mirror = mirror
        self.levels = {r: images}
        while r > 4:
            self.levels[r // 2] = box_downsample(self.levels[r])
            r //= 2
        self.order = np.empty(0, dtype=np.int64)
        self.cursor = 0
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.levels[self.resolution])

    @property
    def resolution(self) -> int:
        return max(self.levels)

    def next_indices(self, count: int, rng: np.random.Generator) -> np.ndarray:
        out = []
        while count > 0:
            if self.cursor >= len(self.order):
                self.order = rng.permutation(len(self))
                self.cursor = 0
                self.epoch += 1
            take = self.order[self.cursor : self.cursor + count]
            self.cursor += len(take)
            count -= len(take)
            out.append(take)
        return np.concatenate(out)

    def batch(self, count: int, resolution: int, rng: np.random.Generator, alpha: float = 1.0) -> np.ndarray:
        """Real images at ``resolution``; during a fade (alpha < 1) they are
        blended with the upsampled previous level like the generator output."""
        idx = self.next_indices(count, rng)
        x = self.levels[resolution][idx]
        if alpha < 1.0:
            low = self.levels[resolution // 2][idx]
            low = low.repeat(2, axis=-2).repeat(2, axis=-1)
            x = (low + x.dtype.type(alpha) * (x - low)).astype(x.dtype)
        if self.mirror:
            flip = rng.random(count) < 0.5
            x = np.where(flip[:, None, None, None], x[..., ::-1], x)
        return np.ascontiguousarray(x)

    def state(self) -> dict:
        return {"order": self.order.tolist(), "cursor": self.cursor, "epoch": self.epoch}

    def load_state(self, state: dict) -> None:
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.cursor = int(state["cursor"])
        self.epoch = int(state["epoch"])
