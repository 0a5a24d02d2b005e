"""Resolution schedule driven by the number of real images shown."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

FULL_PHASE_LENGTH = 800_000
REDUCED_PHASE_LENGTH = 600_000

DEFAULT_MINIBATCH = {256: 14, 512: 6, 1024: 3}


@dataclass(frozen=True)
class ScheduleConfig:
    phase_length: int = FULL_PHASE_LENGTH
    start_resolution: int = 4
    max_resolution: int = 1024
    progressive: bool = True
    minibatch_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.phase_length < 1:
            raise ValueError("phase_length must be positive")
        if self.max_resolution < self.start_resolution:
            raise ValueError("max_resolution must be >= start_resolution")

    @property
    def levels(self) -> int:
        return int(math.log2(self.max_resolution // self.start_resolution))


@dataclass(frozen=True)
class ProgressionState:
    images_shown: int
    resolution: int
    phase: str
    alpha: float
    phase_index: int
    phase_length: int

    @property
    def fading(self) -> bool:
        return self.phase == "fade"


def state_at(images_shown: int, config: ScheduleConfig = ScheduleConfig()) -> ProgressionState:
    """Schedule state after ``images_shown`` real images.

    Phase 0 stabilizes at the start resolution; odd phases fade in the next
    block and even phases stabilize it.  Past the last block the schedule
    stays in a terminal stabilize phase.
    """
    if images_shown < 0:
        raise ValueError("images_shown must be non-negative")
    L = config.phase_length
    if not config.progressive:
        return ProgressionState(images_shown, config.max_resolution, "stabilize", 1.0, 0, L)
    last = 2 * config.levels
    p = images_shown // L
    if p >= last:
        return ProgressionState(images_shown, config.max_resolution, "stabilize", 1.0, last, L)
    doublings = (p + 1) // 2
    resolution = config.start_resolution << doublings
    if p % 2 == 1:
        alpha = (images_shown - p * L) / L
        return ProgressionState(images_shown, resolution, "fade", alpha, p, L)
    return ProgressionState(images_shown, resolution, "stabilize", 1.0, p, L)


def minibatch_size_for(resolution: int, overrides: dict | None = None) -> int:
    if overrides and resolution in overrides:
        return int(overrides[resolution])
    if resolution < 4 or resolution & (resolution - 1):
        raise ValueError(f"invalid resolution {resolution}")
    return DEFAULT_MINIBATCH.get(resolution, 16 if resolution <= 128 else 3)


@dataclass(frozen=True)
class ThroughputRecord:
    images_shown: int
    wall_time: float
    resolution: int = 0


class ThroughputLog:
    """Append-only (images shown, wall-clock) records; the counter may not regress."""

    header = ("images_shown", "wall_time", "resolution")

    def __init__(self):
        self.records: list[ThroughputRecord] = []

    def append(self, images_shown: int, wall_time: float, resolution: int = 0) -> ThroughputRecord:
        if self.records and images_shown < self.records[-1].images_shown:
            raise ValueError(
                f"images_shown regressed from {self.records[-1].images_shown} to {images_shown}"
            )
        rec = ThroughputRecord(int(images_shown), float(wall_time), int(resolution))
        self.records.append(rec)
        return rec

    def write_csv(self, path: str | Path, append: bool = False) -> None:
        path = Path(path)
        new = not (append and path.exists())
        with path.open("a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(self.header)
            for r in self.records:
                w.writerow((r.images_shown, repr(r.wall_time), r.resolution))


def throughput_log(stream: Iterable) -> list[ThroughputRecord]:
    """Validate a stream of ``(images_shown, wall_time[, resolution])`` tuples."""
    log = ThroughputLog()
    for item in stream:
        log.append(*item)
    return log.records
