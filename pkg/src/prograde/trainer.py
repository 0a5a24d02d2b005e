"""Training loop: alternating updates, schedule-driven growth, EMA and checkpoints."""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .autodiff import Graph, NonFiniteError, Tensor, default_dtype, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, serialize_config
from .data import ImageDataset, image_grid, save_png
from .latents import sample_latents
from .layers import FadeState
from .losses import (
    LsganNoiseState,
    adaptive_noise_magnitude,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    wgan_discriminator_loss,
    wgan_generator_loss,
)
from .metrics import SwdReport, swd_report
from .networks import Network, build_network, grow, restore_network, set_trainable
from .optim import Adam, ema_update
from .progression import ProgressionState, ThroughputLog, minibatch_size_for, state_at

_STREAMS = ("data", "latent", "loss", "noise")
_EVAL_STREAM = 7
_SAMPLE_STREAM = 8


class TrainingAborted(RuntimeError):
    """A loss or gradient went non-finite; ``checkpoint_path`` holds the pre-step state."""

    def __init__(self, message: str, checkpoint_path: Path | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict] = field(default_factory=list)


def _swd_levels(config: RunConfig) -> list[int]:
    base, top = config.metrics.swd_base, config.schedule.max_resolution
    return [base << i for i in range(int(np.log2(top // base)) + 1)] if top >= base else []


class Trainer:
    """Owns networks, optimizers, RNG streams and counters for one run."""

    def __init__(self, config: RunConfig, dataset: ImageDataset, seed: int = 0, out_dir: str | Path | None = None):
        self.config = config
        self.dataset = dataset
        self.seed = int(seed)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.schedule = config.schedule_config()
        self.loss_config = config.loss_config()
        self.ema_config = config.ema_config()
        self.dtype = np.dtype(config.network.dtype)
        if config.schedule.max_resolution not in dataset.levels:
            raise ValueError(
                f"dataset resolution {dataset.resolution} cannot provide {config.schedule.max_resolution}x"
                f"{config.schedule.max_resolution} images"
            )
        spec = config.network_spec(self.seed, state_at(0, self.schedule).resolution)
        with default_dtype(self.dtype):
            self.G = build_network("generator", spec)
            self.D = build_network("discriminator", spec)
        self.G_ema = copy.deepcopy(self.G)
        self.G_ema.training = False
        self.opt_G = Adam(config.optimizer_config())
        self.opt_D = Adam(config.optimizer_config())
        streams = np.random.SeedSequence(self.seed).spawn(len(_STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(_STREAMS, streams)}
        self.images_shown = 0
        self.step_count = 0
        self.d_updates = 0
        self.g_updates = 0
        self.noise_state = LsganNoiseState()
        self.history: list[dict] = []
        self.throughput = ThroughputLog()
        self._clock = time.perf_counter()

    # -- structure -----------------------------------------------------------
    @property
    def networks(self) -> tuple[Network, Network, Network]:
        return self.G, self.D, self.G_ema

    @property
    def latent_normalized(self) -> bool:
        return self.G.spec.variant != "baseline-gulrajani"

    def progression(self) -> ProgressionState:
        return state_at(self.images_shown, self.schedule)

    def _finish_fade(self) -> None:
        for net in self.networks:
            net.finish_fade()
        self.opt_G.prune(self.G.parameters())
        self.opt_D.prune(self.D.parameters())

    def sync_structure(self, st: ProgressionState) -> None:
        """Grow or finish fades so the networks match the schedule state."""
        while self.G.resolution < st.resolution:
            self._finish_fade()
            self.G, self.D, self.G_ema = (grow(n, FadeState(0.0)) for n in self.networks)
        if st.fading:
            for net in self.networks:
                net.fade.advance(st.alpha)
        elif self.G.fade is not None:
            self._finish_fade()

    # -- one step ------------------------------------------------------------
    def _latents(self, count: int) -> Tensor:
        z = sample_latents(count, self.G.spec.latent_size, self.rngs["latent"], self.latent_normalized, self.dtype)
        return Tensor(z)

    def _critic(self):
        if self.loss_config.kind != "lsgan":
            return self.D
        # magnitude from the current average; the recurrence advances after the D step
        magnitude = 0.2 * max(0.0, self.noise_state.d_hat - 0.5) ** 2
        return partial(self.D, noise=magnitude, rng=self.rngs["noise"])

    def _check(self, name: str, value: Tensor) -> None:
        if not np.isfinite(value.item()):
            raise NonFiniteError(f"{name} is not finite")

    def _d_step(self, batch: int, st: ProgressionState) -> dict:
        alpha = st.alpha if st.fading else 1.0
        with no_grad():
            fake = self.G(self._latents(batch)).data
        real = self.dataset.batch(batch, st.resolution, self.rngs["data"], alpha).astype(self.dtype, copy=False)
        critic = self._critic()
        params = self.D.parameters()
        with Graph() as g:
            if self.loss_config.kind == "lsgan":
                loss, parts = lsgan_discriminator_loss(critic, Tensor(real), Tensor(fake))
            else:
                loss, parts = wgan_discriminator_loss(critic, Tensor(real), Tensor(fake), self.loss_config, self.rngs["loss"])
            self._check("d_loss", loss)
            grads = g.grad(loss, list(params.values()))
        self.opt_D.step(params, {n: gr.data for n, gr in zip(params, grads)})
        if self.loss_config.kind == "lsgan":
            _, self.noise_state = adaptive_noise_magnitude(self.noise_state, parts["d_real"])
        self.d_updates += 1
        self.images_shown += batch
        parts["d_loss"] = loss.item()
        return parts

    def _g_step(self, batch: int) -> float:
        critic = self._critic()
        params = self.G.parameters()
        set_trainable(self.D, False)
        try:
            with Graph() as g:
                fake = self.G(self._latents(batch))
                if self.loss_config.kind == "lsgan":
                    loss = lsgan_generator_loss(critic, fake)
                else:
                    loss = wgan_generator_loss(critic, fake)
                self._check("g_loss", loss)
                grads = g.grad(loss, list(params.values()))
        finally:
            set_trainable(self.D, True)
        self.opt_G.step(params, {n: gr.data for n, gr in zip(params, grads)})
        self.g_updates += 1
        return loss.item()

    def _update_ema(self) -> None:
        current = {k: t.data for k, t in self.G.parameters().items()}
        ema_params = self.G_ema.parameters()
        new = ema_update({k: t.data for k, t in ema_params.items()}, current, self.ema_config)
        for k, arr in new.items():
            ema_params[k].data = arr
        for name, buf in self.G.buffers().items():
            lname, attr = name.rsplit(".", 1)
            setattr(self.G_ema.layers[lname], attr, buf.copy())

    def step(self) -> dict:
        """n_critic discriminator updates, then one generator update and an EMA update."""
        st = self.progression()
        self.sync_structure(st)
        batch = minibatch_size_for(st.resolution, self.schedule.minibatch_overrides)
        try:
            d_parts = [self._d_step(batch, st) for _ in range(self.loss_config.n_critic)]
            g_loss = self._g_step(batch)
            self._update_ema()
        except NonFiniteError as exc:
            path = self._abort_checkpoint()
            raise TrainingAborted(f"non-finite value at step {self.step_count}: {exc}", path) from exc
        self.step_count += 1
        row = {
            "step": self.step_count,
            "images_shown": self.images_shown,
            "resolution": st.resolution,
            "alpha": st.alpha,
            "d_loss": d_parts[-1]["d_loss"],
            "g_loss": g_loss,
        }
        self.history.append(row)
        return row

    # -- evaluation ----------------------------------------------------------
    def generate(self, latents: np.ndarray, ema: bool = True, batch: int = 64) -> np.ndarray:
        net = self.G_ema if ema else self.G
        out = []
        with no_grad():
            for i in range(0, len(latents), batch):
                out.append(net(Tensor(latents[i : i + batch])).data)
        return np.concatenate(out)

    def evaluate_swd(self, count: int | None = None, rng: np.random.Generator | None = None) -> SwdReport | None:
        """SWD of EMA samples against training images at the current resolution.

        Runs on a snapshot of the EMA generator with its own RNG stream, so
        evaluation never perturbs training.
        """
        cfg = self.config.swd_config()
        r = self.G.resolution
        if r < cfg.base_resolution:
            return None
        count = count or cfg.images_per_set
        rng = rng or np.random.default_rng([self.seed, _EVAL_STREAM, self.images_shown])
        snapshot = copy.deepcopy(self.G_ema)
        z = sample_latents(count, snapshot.spec.latent_size, rng, self.latent_normalized, self.dtype)
        with no_grad():
            fake = np.concatenate([snapshot(Tensor(z[i : i + 64])).data for i in range(0, count, 64)])
        pool = self.dataset.levels[r]
        real = pool[rng.choice(len(pool), size=min(count, len(pool)), replace=False)]
        return swd_report(real, fake[: len(real)], cfg, rng)

    def sample_grid(self, count: int | None = None) -> np.ndarray:
        count = count or self.config.io.sample_count
        rng = np.random.default_rng([self.seed, _SAMPLE_STREAM])
        z = sample_latents(count, self.G.spec.latent_size, rng, self.latent_normalized, self.dtype)
        return image_grid(self.generate(z))

    # -- checkpoints ---------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        arrays: dict[str, np.ndarray] = {}
        for prefix, net in (("G", self.G), ("D", self.D), ("G_ema", self.G_ema)):
            for k, v in net.state_dict().items():
                arrays[f"{prefix}/{k}"] = v
        for prefix, opt in (("opt_G", self.opt_G), ("opt_D", self.opt_D)):
            for k in opt.m:
                arrays[f"{prefix}.m/{k}"] = opt.m[k]
                arrays[f"{prefix}.v/{k}"] = opt.v[k]
        arrays["data/order"] = self.dataset.order
        # layer order depends on how a network was assembled; names are canonical
        arrays = dict(sorted(arrays.items()))
        st = self.progression()
        meta = {
            "config": serialize_config(self.config),
            "seed": self.seed,
            "step": self.step_count,
            "images_shown": self.images_shown,
            "d_updates": self.d_updates,
            "g_updates": self.g_updates,
            "resolution": self.G.resolution,
            "fade": None if self.G.fade is None else self.G.fade.alpha,
            "progression": {"resolution": st.resolution, "phase": st.phase, "alpha": st.alpha},
            "adam": {
                "opt_G": {"t": self.opt_G.t, "updates": self.opt_G.updates},
                "opt_D": {"t": self.opt_D.t, "updates": self.opt_D.updates},
            },
            "rng": {k: r.bit_generator.state for k, r in self.rngs.items()},
            "data": {"cursor": self.dataset.cursor, "epoch": self.dataset.epoch},
            "d_hat": self.noise_state.d_hat,
        }
        return Checkpoint(arrays, meta)

    @classmethod
    def from_checkpoint(
        cls, ckpt: Checkpoint, dataset: ImageDataset, out_dir: str | Path | None = None
    ) -> Trainer:
        meta = ckpt.meta
        config = parse_config(meta["config"])
        trainer = cls(config, dataset, meta["seed"], out_dir)
        spec = config.network_spec(trainer.seed, meta["resolution"])
        with default_dtype(trainer.dtype):
            G = restore_network("generator", spec, meta["fade"])
            D = restore_network("discriminator", spec, meta["fade"])
            G_ema = restore_network("generator", spec, meta["fade"])
        G_ema.training = False
        for prefix, net in (("G", G), ("D", D), ("G_ema", G_ema)):
            net.load_state_dict({k[len(prefix) + 1 :]: v for k, v in ckpt.arrays.items() if k.startswith(prefix + "/")})
        trainer.G, trainer.D, trainer.G_ema = G, D, G_ema
        for prefix, opt in (("opt_G", trainer.opt_G), ("opt_D", trainer.opt_D)):
            state = meta["adam"][prefix]
            opt.t = {k: int(v) for k, v in state["t"].items()}
            opt.updates = int(state["updates"])
            opt.m = {k: ckpt.arrays[f"{prefix}.m/{k}"].copy() for k in opt.t}
            opt.v = {k: ckpt.arrays[f"{prefix}.v/{k}"].copy() for k in opt.t}
        for k, state in meta["rng"].items():
            trainer.rngs[k].bit_generator.state = state
        dataset.order = ckpt.arrays["data/order"].astype(np.int64)
        dataset.cursor = int(meta["data"]["cursor"])
        dataset.epoch = int(meta["data"]["epoch"])
        trainer.images_shown = int(meta["images_shown"])
        trainer.step_count = int(meta["step"])
        trainer.d_updates = int(meta["d_updates"])
        trainer.g_updates = int(meta["g_updates"])
        trainer.noise_state = LsganNoiseState(float(meta["d_hat"]))
        return trainer

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        save_checkpoint(path, self.checkpoint())
        return path

    def _abort_checkpoint(self) -> Path | None:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.save(self.out_dir / "abort.ckpt")

    # -- run loop ------------------------------------------------------------
    def _metrics_header(self) -> list[str]:
        return ["step", "images_shown", "resolution", "alpha", "d_loss", "g_loss"] + [
            f"swd_{r}" for r in _swd_levels(self.config)
        ] + ["swd_avg"]

    def run(
        self,
        total_images: int | None = None,
        callbacks: Iterable[Callable[[Trainer, dict], None]] = (),
    ) -> TrainResult:
        """Train until ``total_images`` real images have been shown."""
        total = total_images if total_images is not None else self.config.total_images()
        io, swd_every = self.config.io, self.config.metrics.swd_every
        writer = fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "config.txt").write_text(serialize_config(self.config))
            path = self.out_dir / "metrics.csv"
            new = not path.exists()
            fh = path.open("a", newline="")
            writer = csv.DictWriter(fh, self._metrics_header(), restval="")
            if new:
                writer.writeheader()
        try:
            while self.images_shown < total:
                before = self.images_shown
                row = self.step()
                if swd_every and before // swd_every != self.images_shown // swd_every:
                    report = self.evaluate_swd()
                    if report is not None:
                        for lv, d in zip(report.levels, report.scaled):
                            row[f"swd_{lv}"] = d
                        row["swd_avg"] = report.average * report.scale
                self.throughput.append(self.images_shown, time.perf_counter() - self._clock, row["resolution"])
                if writer is not None:
                    writer.writerow(row)
                    out = self.out_dir
                    if io.sample_every and before // io.sample_every != self.images_shown // io.sample_every:
                        save_png(out / f"samples-{self.images_shown:09d}.png", self.sample_grid())
                    if io.checkpoint_every and before // io.checkpoint_every != self.images_shown // io.checkpoint_every:
                        self.save(out / f"checkpoint-{self.images_shown:09d}.ckpt")
                for cb in callbacks:
                    cb(self, row)
        finally:
            if fh is not None:
                fh.close()
        if self.out_dir is not None:
            self.save(self.out_dir / "final.ckpt")
            save_png(self.out_dir / "samples-final.png", self.sample_grid())
            self.throughput.write_csv(self.out_dir / "throughput.csv", append=True)
        return TrainResult(self.checkpoint(), self.history)


def train(
    dataset: ImageDataset,
    config: RunConfig,
    seed: int = 0,
    out_dir: str | Path | None = None,
    callbacks: Iterable[Callable[[Trainer, dict], None]] = (),
    total_images: int | None = None,
    resume: str | Path | Checkpoint | None = None,
) -> TrainResult:
    """Build (or resume) a trainer and run it to ``total_images``."""
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        trainer = Trainer.from_checkpoint(ckpt, dataset, out_dir)
    else:
        trainer = Trainer(config, dataset, seed, out_dir)
    return trainer.run(total_images, callbacks)


def load_generator(ckpt: Checkpoint | str | Path, ema: bool = True) -> Network:
    """Generator (EMA weights by default) rebuilt from a checkpoint, in evaluation mode."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    meta = ckpt.meta
    config = parse_config(meta["config"])
    spec = config.network_spec(meta["seed"], meta["resolution"])
    prefix = "G_ema/" if ema else "G/"
    with default_dtype(config.network.dtype):
        G = restore_network("generator", spec, meta["fade"])
    G.load_state_dict({k[len(prefix) :]: v for k, v in ckpt.arrays.items() if k.startswith(prefix)})
    G.training = False
    return G
