"""Flat ``section.key = value`` run configuration.

Every tunable constant has a documented key.  Unknown keys, type mismatches
and out-of-range values raise :class:`ConfigError` naming the key and line.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .losses import LossConfig
from .metrics import SwdConfig
from .networks import VARIANTS, NetworkSpec
from .optim import EmaConfig, OptimizerConfig
from .progression import FULL_PHASE_LENGTH, ScheduleConfig
from .latents import LatentWalkConfig


class ConfigError(ValueError):
    pass


def _pow2(v):
    return v >= 4 and v & (v - 1) == 0 and v <= 1024


@dataclass(frozen=True)
class NetworkSection:
    variant: str = "full"
    latent_size: int = 512
    channel_divisor: int = 1
    dtype: str = "float32"


@dataclass(frozen=True)
class ScheduleSection:
    phase_length: int = FULL_PHASE_LENGTH
    start_resolution: int = 4
    max_resolution: int = 1024
    progressive: bool = True
    total_images: int = 0  # 0: run through the terminal stabilize phase
    minibatch: str = ""  # overrides, e.g. "4:32,8:32"


@dataclass(frozen=True)
class LossSection:
    kind: str = "wgan-gp"
    gamma: float = 1.0
    # "lambda" is a Python keyword, so the field carries a trailing underscore
    lambda_: float = 10.0
    drift: float = 0.001
    n_critic: int = 1


@dataclass(frozen=True)
class OptimizerSection:
    alpha: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    epsilon: float = 1e-8
    ema_decay: float = 0.999


@dataclass(frozen=True)
class MetricsSection:
    swd_images: int = 1024
    swd_patches: int = 128
    swd_projections: int = 128
    swd_base: int = 16
    patch_size: int = 7
    swd_every: int = 0  # images between evaluations, 0 disables periodic SWD


@dataclass(frozen=True)
class DatasetSection:
    path: str = ""  # empty: procedural shapes
    synthetic_count: int = 2000
    mirror: bool = False


@dataclass(frozen=True)
class IoSection:
    checkpoint_every: int = 0  # images between checkpoints, 0: only at the end
    sample_every: int = 0
    sample_count: int = 16
    walk_sigma_frames: float = 45.0
    walk_frame_rate: float = 60.0


_SECTIONS = {
    "network": NetworkSection,
    "schedule": ScheduleSection,
    "loss": LossSection,
    "optimizer": OptimizerSection,
    "metrics": MetricsSection,
    "dataset": DatasetSection,
    "io": IoSection,
}

_CHECKS = {
    "network.variant": (lambda v: v in VARIANTS, f"one of {VARIANTS}"),
    "network.latent_size": (lambda v: v >= 1, ">= 1"),
    "network.channel_divisor": (lambda v: v >= 1, ">= 1"),
    "network.dtype": (lambda v: v in ("float32", "float64"), "float32 or float64"),
    "schedule.phase_length": (lambda v: v >= 1, ">= 1"),
    "schedule.start_resolution": (_pow2, "a power of two in [4, 1024]"),
    "schedule.max_resolution": (_pow2, "a power of two in [4, 1024]"),
    "schedule.total_images": (lambda v: v >= 0, ">= 0"),
    "loss.kind": (lambda v: v in ("wgan-gp", "lsgan"), "wgan-gp or lsgan"),
    "loss.gamma": (lambda v: v > 0, "> 0"),
    "loss.lambda": (lambda v: v >= 0, ">= 0"),
    "loss.drift": (lambda v: v >= 0, ">= 0"),
    "loss.n_critic": (lambda v: v >= 1, ">= 1"),
    "optimizer.alpha": (lambda v: v > 0, "> 0"),
    "optimizer.beta1": (lambda v: 0 <= v < 1, "in [0, 1)"),
    "optimizer.beta2": (lambda v: 0 <= v < 1, "in [0, 1)"),
    "optimizer.epsilon": (lambda v: v > 0, "> 0"),
    "optimizer.ema_decay": (lambda v: 0 <= v <= 1, "in [0, 1]"),
    "metrics.swd_images": (lambda v: v >= 1, ">= 1"),
    "metrics.swd_patches": (lambda v: v >= 1, ">= 1"),
    "metrics.swd_projections": (lambda v: v >= 1, ">= 1"),
    "metrics.swd_base": (_pow2, "a power of two in [4, 1024]"),
    "metrics.patch_size": (lambda v: v >= 1 and v % 2 == 1, "odd and >= 1"),
    "metrics.swd_every": (lambda v: v >= 0, ">= 0"),
    "dataset.synthetic_count": (lambda v: v >= 1, ">= 1"),
    "io.checkpoint_every": (lambda v: v >= 0, ">= 0"),
    "io.sample_every": (lambda v: v >= 0, ">= 0"),
    "io.sample_count": (lambda v: v >= 1, ">= 1"),
    "io.walk_sigma_frames": (lambda v: v > 0, "> 0"),
    "io.walk_frame_rate": (lambda v: v > 0, "> 0"),
}


def _key_name(f) -> str:
    return f.name.rstrip("_")


def parse_minibatch_overrides(text: str) -> dict[int, int]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        res, _, size = item.partition(":")
        r, n = int(res), int(size)
        if not _pow2(r) or n < 1:
            raise ValueError(f"bad minibatch override {item!r}")
        out[r] = n
    return out


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSection = field(default_factory=NetworkSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    io: IoSection = field(default_factory=IoSection)

    # -- typed views ---------------------------------------------------------
    def network_spec(self, seed: int = 0, resolution: int | None = None) -> NetworkSpec:
        s = self.schedule
        return NetworkSpec(
            resolution=resolution or (s.start_resolution if s.progressive else s.max_resolution),
            variant=self.network.variant,
            latent_size=self.network.latent_size,
            max_resolution=s.max_resolution,
            channel_divisor=self.network.channel_divisor,
            seed=seed,
        )

    def schedule_config(self) -> ScheduleConfig:
        s = self.schedule
        return ScheduleConfig(
            s.phase_length, s.start_resolution, s.max_resolution, s.progressive, parse_minibatch_overrides(s.minibatch)
        )

    def total_images(self) -> int:
        s = self.schedule
        if s.total_images:
            return s.total_images
        levels = int(math.log2(s.max_resolution // s.start_resolution)) if s.progressive else 0
        return (2 * levels + 1) * s.phase_length

    def loss_config(self) -> LossConfig:
        lo = self.loss
        return LossConfig(lo.kind, lo.gamma, lo.lambda_, lo.drift, lo.n_critic)

    def optimizer_config(self) -> OptimizerConfig:
        o = self.optimizer
        return OptimizerConfig(o.alpha, o.beta1, o.beta2, o.epsilon)

    def ema_config(self) -> EmaConfig:
        return EmaConfig(self.optimizer.ema_decay)

    def swd_config(self) -> SwdConfig:
        m = self.metrics
        return SwdConfig(m.swd_images, m.swd_patches, m.swd_projections, m.swd_base, m.patch_size)

    def walk_config(self) -> LatentWalkConfig:
        return LatentWalkConfig(self.io.walk_sigma_frames, self.io.walk_frame_rate, self.network.latent_size)

    def with_values(self, **values) -> RunConfig:
        """Copy with ``section_key=value`` style overrides, e.g. ``loss_gamma=750``."""
        text = serialize_config(self) + "".join(
            f"{k.replace('_', '.', 1)} = {_format(v)}\n" for k, v in values.items()
        )
        return parse_config(text)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(raw: str, typ, key: str, lineno: int):
    try:
        if typ == "bool" or typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if typ == "int" or typ is int:
            v = float(raw.replace("_", ""))
            if not v.is_integer():
                raise ValueError
            return int(v)
        if typ == "float" or typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            return raw[1:-1]
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: {key}: expected {typ}, got {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        fmap = {_key_name(f): f for f in fields(cls)} if cls else {}
        if name not in fmap:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = fmap[name]
        value = _convert(raw, f.type, key, lineno)
        check = _CHECKS.get(key)
        if check and not check[0](value):
            raise ConfigError(f"line {lineno}: {key} = {raw} out of range (must be {check[1]})")
        if key == "schedule.minibatch":
            try:
                parse_minibatch_overrides(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        values[section][f.name] = value
    sections = {name: cls(**values[name]) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**sections)
    s = cfg.schedule
    if s.start_resolution > s.max_resolution:
        raise ConfigError("schedule.start_resolution exceeds schedule.max_resolution")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        for f in fields(section):
            lines.append(f"{name}.{_key_name(f)} = {_format(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def desk_smoke_config() -> RunConfig:
    """Reduced networks growing 4 -> 16 on the procedural shapes set."""
    base = RunConfig()
    return replace(
        base,
        network=NetworkSection(variant="reduced", latent_size=64, channel_divisor=16),
        schedule=ScheduleSection(phase_length=20_000, max_resolution=16),
    )
