"""Landmark-driven face crops, border extension, quality scoring and selection.

Images here are float arrays shaped (C, H, W).  Pixel centers sit at integer
coordinates; points are (x, y) with y increasing downward.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, map_coordinates


@dataclass(frozen=True)
class Landmarks:
    e0: np.ndarray
    e1: np.ndarray
    m0: np.ndarray
    m1: np.ndarray

    def __post_init__(self):
        for name in ("e0", "e1", "m0", "m1"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.array_equal(self.e0, self.e1):
            raise ValueError("eye landmarks coincide")

    @classmethod
    def from_row(cls, values: Sequence[float]) -> Landmarks:
        v = [float(a) for a in values]
        return cls(v[0:2], v[2:4], v[4:6], v[6:8])


@dataclass(frozen=True)
class CropFrame:
    c: np.ndarray
    s: float
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def axis_aligned(cls, width: int, height: int | None = None) -> CropFrame:
        """Frame covering a whole square image, upright."""
        height = width if height is None else height
        if width != height:
            raise ValueError("axis_aligned frames cover square images")
        c = np.array([(width - 1) / 2, (height - 1) / 2])
        return cls(c, float(width), np.array([1.0, 0.0]), np.array([0.0, -1.0]))


def rotate90(v: np.ndarray) -> np.ndarray:
    """(u, v) -> (v, -u)."""
    v = np.asarray(v, dtype=np.float64)
    return np.array([v[1], -v[0]])


def crop_frame_from_landmarks(lm: Landmarks) -> CropFrame:
    """Oriented square crop from eye and mouth positions.

    x' = e1 - e0, y' = mid(eyes) - mid(mouth), c = mid(eyes) - 0.1 y',
    s = max(4 |x'|, 3.6 |y'|), x = normalize(x' - rot90(y')), y = rot90(x).
    """
    xp = lm.e1 - lm.e0
    eye_mid = 0.5 * (lm.e0 + lm.e1)
    yp = eye_mid - 0.5 * (lm.m0 + lm.m1)
    c = eye_mid - 0.1 * yp
    s = max(4.0 * math.hypot(*xp), 3.6 * math.hypot(*yp))
    axis = xp - rotate90(yp)
    n = math.hypot(*axis)
    if n == 0.0 or s == 0.0:
        raise ValueError("degenerate landmarks: crop axis undefined")
    x = axis / n
    return CropFrame(c, s, x, rotate90(x))


def frame_sample_points(frame: CropFrame, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Image-space (x, y) coordinates of a ``size`` x ``size`` grid over the frame.

    Output columns advance along ``frame.x`` and rows along ``-frame.y``.
    """
    t = (np.arange(size) + 0.5 - size / 2) * (frame.s / size)
    u, v = np.meshgrid(t, t, indexing="xy")  # u: column offset, v: row offset
    px = frame.c[0] + u * frame.x[0] - v * frame.y[0]
    py = frame.c[1] + u * frame.x[1] - v * frame.y[1]
    return px, py


def extend_borders(image: np.ndarray, margin: int) -> np.ndarray:
    """Mirror-pad by ``margin`` and fade the padded band into a blurred copy.

    The blend weight grows linearly from 0 at the original border to 1 at the
    outer edge; the blur is Gaussian with sigma = margin / 4.  Pixels inside
    the original bounds are returned unchanged.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if margin == 0:
        return image.copy()
    h, w = image.shape[-2:]
    pad = [(0, 0)] * (image.ndim - 2) + [(margin, margin), (margin, margin)]
    padded = np.pad(image, pad, mode="symmetric")
    sigma = [0] * (image.ndim - 2) + [margin / 4, margin / 4]
    blurred = gaussian_filter(padded, sigma, mode="reflect")
    rows = np.arange(h + 2 * margin)
    cols = np.arange(w + 2 * margin)
    dr = np.maximum(margin - rows, rows - (h - 1 + margin)).clip(0)
    dc = np.maximum(margin - cols, cols - (w - 1 + margin)).clip(0)
    weight = np.maximum(dr[:, None], dc[None, :]) / margin
    blended = padded + weight * (blurred - padded)
    return np.where(weight > 0, blended, padded)


def render_crop(
    image: np.ndarray,
    frame: CropFrame,
    supersample: int = 512,
    output: int = 128,
    extend: bool = True,
) -> np.ndarray:
    """Bilinear resampling of the oriented square, then exact box reduction."""
    if supersample % output:
        raise ValueError(f"supersample {supersample} is not a multiple of output {output}")
    h, w = image.shape[-2:]
    px, py = frame_sample_points(frame, supersample)
    overshoot = max(-px.min(), -py.min(), px.max() - (w - 1), py.max() - (h - 1), 0.0)
    margin = 0
    if overshoot > 0:
        if not extend:
            raise ValueError("crop frame reaches outside the image and extension is disabled")
        margin = int(math.ceil(overshoot)) + 1
        image = extend_borders(image, margin)
    coords = np.stack([py + margin, px + margin])
    channels = [map_coordinates(ch, coords, order=1, mode="nearest") for ch in image.reshape(-1, *image.shape[-2:])]
    big = np.stack(channels).reshape(image.shape[:-2] + (supersample, supersample))
    f = supersample // output
    return big.reshape(big.shape[:-2] + (output, f, output, f)).mean(axis=(-3, -1))


def _grayscale(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image if image.ndim == 2 else image.mean(axis=0)


def quality_score(image: np.ndarray, angular_bins: int = 16) -> float:
    """Spectral breadth times radial symmetry, in [0, 1]; higher is better.

    Breadth is the fraction of (mean-removed) spectral energy above half the
    Nyquist radius.  Symmetry is 1 minus the variance of mean spectral energy
    over ``angular_bins`` orientations (radius <= Nyquist), normalized by its
    maximum so the factor stays in [0, 1].
    """
    g = _grayscale(image)
    if g.shape[0] != g.shape[1]:
        raise ValueError("quality_score expects a square image")
    power = np.abs(np.fft.fft2(g - g.mean())) ** 2
    fy = np.fft.fftfreq(g.shape[0])[:, None]
    fx = np.fft.fftfreq(g.shape[1])[None, :]
    radius = np.hypot(fx, fy) / 0.5
    total = power.sum()
    if total <= 0:
        return 0.0
    high = power[radius > 0.5].sum() / total
    theta = np.mod(np.arctan2(fy, fx), np.pi)
    inside = (radius > 0) & (radius <= 1)
    bins = np.minimum((theta[inside] / np.pi * angular_bins).astype(int), angular_bins - 1)
    energy = np.bincount(bins, weights=power[inside], minlength=angular_bins)
    counts = np.bincount(bins, minlength=angular_bins)
    density = energy / np.maximum(counts, 1)
    mean = density.mean()
    anisotropy = 0.0 if mean == 0 else density.var() / (mean * mean * (angular_bins - 1))
    return float(high * (1.0 - min(anisotropy, 1.0)))


def select_top_k(scores: Sequence[float], k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, best first; ties keep input order."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= k <= len(scores):
        raise ValueError(f"k={k} outside [0, {len(scores)}]")
    return np.argsort(-scores, kind="stable")[:k]


def mirror(image: np.ndarray) -> np.ndarray:
    """Horizontal flip."""
    return image[..., ::-1].copy()


def identity_enhance(image: np.ndarray) -> np.ndarray:
    """Default enhancement hook: images are assumed already clean."""
    return image


LANDMARK_COLUMNS = ("filename", "e0x", "e0y", "e1x", "e1y", "m0x", "m0y", "m1x", "m1y")


def read_landmarks(path: str | Path) -> list[tuple[str, Landmarks]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LANDMARK_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [(row["filename"], Landmarks.from_row([row[c] for c in LANDMARK_COLUMNS[1:]])) for row in reader]


def prep_dataset(
    images_dir: str | Path,
    landmarks_csv: str | Path,
    out_dir: str | Path,
    top_k: int,
    supersample: int = 512,
    output: int = 128,
    enhance: Callable[[np.ndarray], np.ndarray] = identity_enhance,
) -> list[dict]:
    """Crop every landmarked image, score it, keep the best ``top_k``.

    Writes the kept crops as PNGs and ``manifest.csv`` (filename, score,
    selected) covering every input.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    crops, rows = [], []
    for name, lm in read_landmarks(landmarks_csv):
        with Image.open(Path(images_dir) / name) as im:
            img = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1)
        crop = render_crop(enhance(img), crop_frame_from_landmarks(lm), supersample, output)
        crops.append(crop)
        rows.append({"filename": Path(name).stem + ".png", "score": quality_score(crop), "selected": False})
    for i in select_top_k([r["score"] for r in rows], top_k):
        rows[i]["selected"] = True
        pixels = np.clip(np.round(crops[i]), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(pixels).save(out_dir / rows[i]["filename"])
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["filename", "score", "selected"])
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "score": repr(r["score"]), "selected": int(r["selected"])})
    return rows
