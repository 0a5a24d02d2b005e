"""``prograde`` command line: train, eval-swd, mode-test, prep-dataset, latent-walk, gen-samples.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Errors are reported as
one line on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from .autodiff import Tensor, no_grad
from .config import RunConfig, load_config
from .data import ImageDataset, image_grid, load_image_dir, save_png, synthetic_shapes
from .dataset_tools import prep_dataset
from .latents import LatentWalkConfig, latent_walk, sample_latents
from .metrics import mode_coverage, swd_report
from .trainer import load_generator, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _generate(G, z: np.ndarray, batch: int = 64) -> np.ndarray:
    dtype = next(iter(G.parameters().values())).dtype
    z = z.astype(dtype, copy=False)
    with no_grad():
        return np.concatenate([G(Tensor(z[i : i + batch])).data for i in range(0, len(z), batch)])


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def load_training_images(config: RunConfig, seed: int) -> np.ndarray:
    res = config.schedule.max_resolution
    if config.dataset.path:
        return load_image_dir(config.dataset.path, res)
    return synthetic_shapes(config.dataset.synthetic_count, res, np.random.default_rng([seed, 1]))


def cmd_train(args) -> None:
    config = _config(args.config)
    images = load_training_images(config, args.seed)
    dataset = ImageDataset(images, mirror=config.dataset.mirror)
    result = train(dataset, config, args.seed, args.out, total_images=args.total_images, resume=args.resume)
    last = result.metrics[-1] if result.metrics else {}
    print(f"done images_shown={result.checkpoint.meta['images_shown']} resolution={result.checkpoint.meta['resolution']}"
          + (f" d_loss={last['d_loss']:.6g} g_loss={last['g_loss']:.6g}" if last else ""))


def cmd_eval_swd(args) -> None:
    config = _config(args.config)
    real = load_image_dir(args.real, args.resolution or _first_size(args.real), np.float64)
    fake = load_image_dir(args.fake, real.shape[-1], np.float64)
    report = swd_report(real, fake, config.swd_config(), np.random.default_rng(args.seed))
    out = csv.writer(sys.stdout)
    out.writerow(("level", "swd_x1e3"))
    for level, value in report.as_rows():
        out.writerow((level, repr(value)))


def _first_size(directory) -> int:
    for p in sorted(Path(directory).iterdir()):
        with contextlib.suppress(OSError):
            with Image.open(p) as im:
                return im.size[0]
    raise FileNotFoundError(f"no images in {directory}")


def read_labels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: no labels")
    col = 0
    try:
        int(rows[0][0])
    except ValueError:
        header = [h.strip() for h in rows[0]]
        col = header.index("label") if "label" in header else 0
        rows = rows[1:]
    return np.array([int(r[col]) for r in rows], dtype=np.int64)


def cmd_mode_test(args) -> None:
    modes, kl = mode_coverage(read_labels(args.labels), args.total_modes)
    print("modes,kl")
    print(f"{modes},{kl!r}")


def cmd_prep_dataset(args) -> None:
    rows = prep_dataset(args.images, args.landmarks, args.out, args.top_k, args.supersample, args.output)
    print(f"processed={len(rows)} selected={sum(r['selected'] for r in rows)}")


def cmd_latent_walk(args) -> None:
    G = load_generator(args.checkpoint)
    cfg = LatentWalkConfig(args.sigma_frames, args.frame_rate, G.spec.latent_size)
    z = latent_walk(args.frames, cfg, np.random.default_rng(args.seed))
    frames = _generate(G, z)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "latents.npy", z)
    for i, img in enumerate(frames):
        save_png(out / f"frame-{i:05d}.png", img)
    print(f"frames={len(frames)}")


def cmd_gen_samples(args) -> None:
    G = load_generator(args.checkpoint)
    normalize = G.spec.variant != "baseline-gulrajani"
    z = sample_latents(args.count, G.spec.latent_size, np.random.default_rng(args.seed), normalize)
    images = _generate(G, z)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        save_png(out / f"sample-{i:04d}.png", img)
    save_png(out / "grid.png", image_grid(images))
    print(f"samples={len(images)}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prograde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a generator/discriminator pair")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--total-images", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-swd", help="multi-scale SWD between two image folders")
    e.add_argument("--real", required=True)
    e.add_argument("--fake", required=True)
    e.add_argument("--config")
    e.add_argument("--resolution", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval_swd)

    m = sub.add_parser("mode-test", help="modes covered and KL to uniform from a label CSV")
    m.add_argument("--labels", required=True)
    m.add_argument("--total-modes", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_mode_test)

    d = sub.add_parser("prep-dataset", help="landmark crops, scoring and top-k selection")
    d.add_argument("--images", required=True)
    d.add_argument("--landmarks", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--top-k", type=int, required=True)
    d.add_argument("--supersample", type=int, default=512)
    d.add_argument("--output", type=int, default=128)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_prep_dataset)

    w = sub.add_parser("latent-walk", help="render a temporally smoothed latent walk")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--frames", type=int, default=120)
    w.add_argument("--sigma-frames", type=float, default=45.0)
    w.add_argument("--frame-rate", type=float, default=60.0)
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_latent_walk)

    g = sub.add_parser("gen-samples", help="EMA generator samples as PNGs plus a grid")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_samples)
    return p


def _thread_limit(args) -> int | None:
    if getattr(args, "deterministic", False):
        return 1
    env = os.environ.get("PROGRADE_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise UsageError("PROGRADE_THREADS must be >= 1")
        return n
    return None


def _one_line(exc: BaseException) -> str:
    return " ".join(f"{type(exc).__name__}: {exc}".split())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        limit = _thread_limit(args)
    except UsageError as exc:
        print(f"usage error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {_one_line(exc)}", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=limit) if limit else contextlib.nullcontext():
            args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one line and exit code 2
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
