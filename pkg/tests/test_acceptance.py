"""Acceptance suite: one test group per criterion, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the pytest terminal summary.
Criterion 9 trains real networks for several minutes per run and is marked
``slow``; it still runs in the default ``pytest`` invocation.
"""

import copy
import math
import time

import numpy as np
import pytest

from prograde.autodiff import Tensor, gradient_check, no_grad
from prograde.autodiff import functional as F
from prograde.checkpoint import Checkpoint, load_checkpoint
from prograde.config import desk_smoke_config
from prograde.data import ImageDataset, synthetic_shapes
from prograde.dataset_tools import Landmarks, crop_frame_from_landmarks, quality_score
from prograde.latents import sample_latents
from prograde.layers import (
    EqualizedConv2d,
    FadeState,
    fade_blend,
    he_scale,
    minibatch_stddev,
    multiplicative_noise,
    pixelnorm,
)
from prograde.losses import LossConfig, LsganNoiseState, adaptive_noise_magnitude, gradient_penalty
from prograde.metrics import (
    laplacian_pyramid,
    mode_coverage,
    random_directions,
    reconstruct_pyramid,
    sliced_wasserstein,
    swd_report,
    SwdConfig,
)
from prograde.networks import NetworkSpec, build_discriminator, build_generator, grow
from prograde.progression import FULL_PHASE_LENGTH, REDUCED_PHASE_LENGTH, ScheduleConfig, minibatch_size_for, state_at
from prograde.trainer import Trainer

from conftest import projection_loss

criterion = pytest.mark.criterion


def f64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def away_from_zero(rng, shape, margin=1e-2):
    """Normal samples kept clear of the leaky ReLU kink, where central differences are undefined."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


# -- 1. first-order gradients --------------------------------------------------

PRIMITIVES = {
    "conv1x1": (lambda x, w: projection_loss(F.conv2d(x, w, padding=0)), [(2, 3, 4, 4), (2, 3, 1, 1)]),
    "conv3x3": (lambda x, w: projection_loss(F.conv2d(x, w, padding=1)), [(2, 2, 4, 4), (3, 2, 3, 3)]),
    "conv4x4": (lambda x, w: projection_loss(F.conv2d(x, w, padding=0)), [(2, 2, 4, 4), (2, 2, 4, 4)]),
    "leaky_relu": (lambda x: projection_loss(F.leaky_relu(x, 0.2)), [(2, 3, 3, 3)]),
    "upsample2x": (lambda x: projection_loss(F.upsample2x(x)), [(2, 2, 3, 3)]),
    "avgpool2x": (lambda x: projection_loss(F.avgpool2x(x)), [(2, 2, 4, 4)]),
    "pixelnorm": (lambda x: projection_loss(pixelnorm(x)), [(2, 4, 3, 3)]),
    "minibatch_stddev": (lambda x: projection_loss(minibatch_stddev(x)), [(3, 2, 2, 2)]),
    "equalized_scaling": (
        lambda x, w: projection_loss(F.conv2d(x, F.scale(w, he_scale(2 * 9)), padding=1)),
        [(2, 2, 4, 4), (2, 2, 3, 3)],
    ),
    "fade_blend": (lambda a, b: projection_loss(fade_blend(a, b, 0.3)), [(2, 3, 2, 2), (2, 3, 2, 2)]),
}


@criterion(1, "gradient correctness of every primitive (10 points each, rel < 1e-5, < 2 min)")
def test_c1_first_order_gradients():
    start = time.process_time()
    worst = {}
    for index, (name, (fn, shapes)) in enumerate(PRIMITIVES.items()):
        rng = np.random.default_rng([1, index])
        errs = [gradient_check(fn, [away_from_zero(rng, s) for s in shapes]) for _ in range(10)]
        worst[name] = max(errs)
    elapsed = time.process_time() - start
    print(f"criterion 1: worst relative error {max(worst.values()):.2e}, {elapsed:.1f} s CPU")
    assert all(e < 1e-5 for e in worst.values()), worst
    assert elapsed < 120


# -- 2. second-order gradients ---------------------------------------------------


@criterion(2, "second-order gradient penalty (rel < 1e-4) and linear closed form 16 (1e-6)")
def test_c2_second_order():
    rng = np.random.default_rng(2)
    points = rng.standard_normal((2, 2, 3, 3))

    def critic(w1, w2):
        def D(x):
            h = F.leaky_relu(F.conv2d(x, w1, padding=1), 0.2)
            h = F.tanh(F.conv2d(h, w2, padding=0))
            return F.reshape(F.sum(h, axis=(1, 2, 3)), (x.shape[0], 1))

        return D

    def penalty(w1, w2):
        return gradient_penalty(critic(w1, w2), None, None, LossConfig(), points=points)

    errs = [
        gradient_check(penalty, [away_from_zero(rng, (3, 2, 3, 3)) * 0.5, rng.standard_normal((1, 3, 3, 3)) * 0.5])
        for _ in range(3)
    ]
    w = f64([[3.0, 4.0]])
    linear = lambda x: F.sum(x * F.broadcast_to(w, x.shape), axis=1, keepdims=True)  # noqa: E731
    gp = gradient_penalty(linear, None, None, LossConfig(gamma=1.0, penalty_weight=1.0), points=rng.standard_normal((5, 2)))
    print(f"criterion 2: worst relative error {max(errs):.2e}, linear critic penalty {gp.item()!r}")
    assert max(errs) < 1e-4
    assert abs(gp.item() - 16.0) < 1e-6


# -- 3. mechanism invariants ---------------------------------------------------


@criterion(3, "pixelnorm, minibatch stddev, equalized forward and fade endpoints")
def test_c3_mechanism_invariants():
    rng = np.random.default_rng(3)
    a = rng.choice([-1.0, 1.0], size=(4, 8, 3, 3)) * rng.uniform(0.5, 2.0, size=(4, 8, 3, 3))
    out = pixelnorm(f64(a)).data
    assert np.abs((out**2).mean(axis=1) - 1.0).max() <= 1e-6
    assert np.abs(pixelnorm(f64(37.0 * a)).data - out).max() <= 1e-6

    batch = np.repeat(rng.standard_normal((1, 3, 4, 4)), 6, axis=0)
    assert np.all(minibatch_stddev(f64(batch)).data[:, -1] == 0.0)
    assert np.all(minibatch_stddev(f64(np.array([0.0, 2.0]).reshape(2, 1, 1, 1))).data[:, 1] == 1.0)

    layer = EqualizedConv2d(3, 4, 3, 1, np.random.default_rng(1), dtype=np.float32)
    layer.bias.data = rng.standard_normal(4).astype(np.float32)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)).astype(np.float32))
    prescaled = Tensor(layer.weight.data * np.float32(layer.scale))
    assert np.array_equal(layer(x).data, F.conv2d(x, prescaled, layer.bias, padding=1).data)

    old, new = Tensor(rng.standard_normal((2, 3, 4, 4))), Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert np.array_equal(fade_blend(old, new, FadeState(0.0)).data, old.data)
    assert np.array_equal(fade_blend(old, new, FadeState(1.0)).data, new.data)
    print("criterion 3: all mechanism invariants hold")


# -- 4. schedule -----------------------------------------------------------------


@criterion(4, "phase table 0..8M (800k and 600k) and minibatch map")
def test_c4_schedule():
    # phase index -> (resolution, phase): stabilize at 4x4, then fade/stabilize per doubling up to 1024
    table = [(4, "stabilize")] + [(4 << (p + 1) // 2, "fade" if p % 2 else "stabilize") for p in range(1, 17)]
    checked = 0
    for length in (FULL_PHASE_LENGTH, REDUCED_PHASE_LENGTH):
        cfg = ScheduleConfig(phase_length=length, max_resolution=1024)
        for p in range(1, 8_000_000 // length + 1):
            boundary = p * length
            expected = table[min(p, 16)]
            for n, (res, phase) in ((boundary - 1, table[p - 1]), (boundary, expected), (boundary + 1, expected)):
                s = state_at(n, cfg)
                assert (s.resolution, s.phase) == (res, phase), (length, n)
                checked += 1
            if expected[1] == "fade":
                assert state_at(boundary, cfg).alpha == 0.0
                assert state_at(boundary + length // 2, cfg).alpha == 0.5
            if table[p - 1][1] == "fade":
                assert state_at(boundary - 1, cfg).alpha == (length - 1) / length
        end = state_at(8_000_000, cfg)
        assert (end.resolution, end.phase) == table[8_000_000 // length]
    full = state_at(1_200_000, ScheduleConfig(max_resolution=1024))
    reduced = state_at(900_000, ScheduleConfig(phase_length=REDUCED_PHASE_LENGTH, max_resolution=1024))
    assert (full.resolution, full.phase, full.alpha) == (reduced.resolution, reduced.phase, reduced.alpha) == (8, "fade", 0.5)
    assert {r: minibatch_size_for(r) for r in (128, 256, 512, 1024)} == {128: 16, 256: 14, 512: 6, 1024: 3}
    print(f"criterion 4: {checked} boundary states match the phase table, minibatch map reproduced")


# -- 5. growth consistency -------------------------------------------------------


@criterion(5, "growing 4 -> 8 -> 16 at alpha 1 equals direct build (1e-6), parameters carried")
def test_c5_growth_consistency():
    def spec(r):
        return NetworkSpec(resolution=r, max_resolution=16, latent_size=32, channel_divisor=16)

    rng = np.random.default_rng(5)
    z = Tensor(sample_latents(4, 32, rng))
    x16 = rng.standard_normal((4, 3, 16, 16)).astype(np.float32)
    G, D = build_generator(spec(4)), build_discriminator(spec(4))
    for r in (8, 16):
        before = {"G": G.state_dict(), "D": D.state_dict()}
        G, D = grow(G, FadeState(1.0)), grow(D, FadeState(1.0))
        for role, net in (("G", G), ("D", D)):
            after = net.state_dict()
            assert all(after[k].tobytes() == v.tobytes() for k, v in before[role].items())
        Gd, Dd = build_generator(spec(r)), build_discriminator(spec(r))
        assert set(Gd.state_dict()) <= set(G.state_dict()) and set(Dd.state_dict()) <= set(D.state_dict())
        Gd.load_state_dict(G.state_dict(), strict=False)
        Dd.load_state_dict(D.state_dict(), strict=False)
        x = Tensor(x16.reshape(4, 3, r, 16 // r, r, 16 // r).mean(axis=(3, 5)))
        with no_grad():
            g_err = np.abs(G(z).data - Gd(z).data).max()
            d_err = np.abs(D(x).data - Dd(x).data).max()
        print(f"criterion 5: {r}x{r} max deviation G {g_err:.2e}, D {d_err:.2e}")
        assert g_err <= 1e-6 and d_err <= 1e-6
        G.finish_fade()
        D.finish_fade()


# -- 6. SWD pipeline -----------------------------------------------------------


@criterion(6, "pyramid exact, SWD(A,A)=0, 1D oracle, mean-shift monotone, concentration, < 5 min")
def test_c6_swd_pipeline():
    start = time.process_time()
    rng = np.random.default_rng(6)
    for r in (16, 32, 64, 128, 256):
        img = rng.uniform(-1, 1, (2, 3, r, r))
        assert np.abs(reconstruct_pyramid(laplacian_pyramid(img, 16)) - img).max() <= 1e-6

    images = synthetic_shapes(1024, 32, np.random.default_rng(0)).astype(np.float64)
    report = swd_report(images, images.copy(), SwdConfig(), np.random.default_rng(1))
    assert report.distances == [0.0, 0.0]

    one_d = sliced_wasserstein(np.array([[0.0], [1.0]]), np.array([[1.0], [2.0]]), directions=np.array([[1.0]]))
    assert one_d == 1.0

    base = np.random.default_rng(1).standard_normal((4096, 147))
    other = np.random.default_rng(2).standard_normal((4096, 147))
    shifted = [other + np.eye(147)[0] * d for d in (0.5, 1.0, 2.0)]
    values = [sliced_wasserstein(base, s, 128, np.random.default_rng(7)) for s in shifted]
    assert values[0] < values[1] < values[2]

    a, b = base[:512], other[:512] + np.eye(147)[0]
    spreads = {n: np.std([sliced_wasserstein(a, b, directions=random_directions(n, 147, np.random.default_rng(s))) for s in range(12)]) for n in (32, 512)}
    assert spreads[512] < spreads[32]

    timed = time.process_time()
    desk = swd_report(images, images[::-1].copy(), SwdConfig(), np.random.default_rng(2))
    desk_time = time.process_time() - timed
    elapsed = time.process_time() - start
    print(
        f"criterion 6: mean-shift SWD {[round(v, 4) for v in values]}, spread 32={spreads[32]:.2e} 512={spreads[512]:.2e}, "
        f"desk report {desk_time:.1f} s, total {elapsed:.1f} s CPU (levels {desk.levels})"
    )
    assert elapsed < 300


# -- 7. mode test ----------------------------------------------------------------


@criterion(7, "mode coverage KL oracles (uniform 0, ln 1000, ln 500 within 1e-9)")
def test_c7_mode_test():
    assert mode_coverage(np.repeat(np.arange(1000), 25)) == (1000, 0.0)
    modes, kl = mode_coverage(np.zeros(25_600, dtype=int))
    assert modes == 1 and abs(kl - math.log(1000)) < 1e-9
    modes, kl = mode_coverage(np.repeat([0, 1], 12_800))
    assert modes == 2 and abs(kl - math.log(500)) < 1e-9
    print("criterion 7: KL oracles reproduced")


# -- 8. dataset geometry ---------------------------------------------------------


@criterion(8, "crop example exact, rigid-motion and scale oracles (1e-9), quality ordinals")
def test_c8_dataset_geometry():
    f = crop_frame_from_landmarks(Landmarks((-1, 0), (1, 0), (-1, 2), (1, 2)))
    assert (f.c.tolist(), f.s, f.x.tolist(), f.y.tolist()) == ([0.0, 0.2], 8.0, [1.0, 0.0], [0.0, -1.0])

    rng = np.random.default_rng(8)
    for _ in range(100):
        pts = rng.uniform(-50, 50, (4, 2))
        base = crop_frame_from_landmarks(Landmarks(*pts))
        theta, pivot, k = rng.uniform(0, 2 * np.pi), rng.uniform(-20, 20, 2), rng.uniform(0.1, 10)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = crop_frame_from_landmarks(Landmarks(*[rot @ (p - pivot) + pivot for p in pts]))
        assert np.abs(moved.c - (rot @ (base.c - pivot) + pivot)).max() < 1e-9
        assert np.abs(moved.x - rot @ base.x).max() < 1e-9 and np.abs(moved.y - rot @ base.y).max() < 1e-9
        assert abs(moved.s - base.s) < 1e-9
        scaled = crop_frame_from_landmarks(Landmarks(*(k * pts)))
        assert np.abs(scaled.c - k * base.c).max() < 1e-9 and abs(scaled.s - k * base.s) < 1e-9
        assert np.abs(scaled.x - base.x).max() < 1e-9 and np.abs(scaled.y - base.y).max() < 1e-9

    yy, xx = np.mgrid[:64, :64]
    for _ in range(20):
        noise = rng.standard_normal((64, 64))
        blurred = noise.reshape(16, 4, 16, 4).mean(axis=(1, 3)).repeat(4, 0).repeat(4, 1)
        assert quality_score(noise) > quality_score(blurred)
        theta, freq = rng.uniform(0, np.pi), rng.uniform(0.1, 0.4)
        stripes = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
        stripes *= np.linalg.norm(noise - noise.mean()) / np.linalg.norm(stripes - stripes.mean())
        assert quality_score(noise) > quality_score(stripes)
    print("criterion 8: geometry oracles hold on 100 trials, quality ordinals on 20 instances each")


# -- 9. end-to-end smoke ---------------------------------------------------------

SMOKE_IMAGES = 100_000
SMOKE_SEEDS = (0, 1, 2)
SWD_SAMPLES = 512


def smoke_dataset():
    return ImageDataset(synthetic_shapes(2000, 16, np.random.default_rng(1234)))


def level16_swd(trainer):
    return trainer.evaluate_swd(SWD_SAMPLES, np.random.default_rng(5)).distances[-1]


def train_smoke(seed, progressive, callbacks=()):
    cfg = desk_smoke_config().with_values(schedule_progressive=progressive)
    trainer = Trainer(cfg, smoke_dataset(), seed=seed)
    start = time.process_time()
    trainer.run(SMOKE_IMAGES, callbacks)
    return trainer, time.process_time() - start


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    """The main progressive run, with a mid-fade checkpoint and the state two steps later."""
    out = tmp_path_factory.mktemp("smoke")
    captured = {}
    resume_step = 4200  # inside the 8 -> 16 fade

    def capture(trainer, row):
        if row["step"] == resume_step:
            captured["path"] = trainer.save(out / "mid.ckpt")
        elif row["step"] == resume_step + 2:
            ref = trainer.checkpoint()
            captured["reference"] = Checkpoint({k: v.copy() for k, v in ref.arrays.items()}, copy.deepcopy(ref.meta))

    flat16 = Trainer(desk_smoke_config().with_values(schedule_progressive=False), smoke_dataset(), seed=0)
    init = level16_swd(flat16)
    trainer, cpu = train_smoke(0, True, [capture])
    return {"trainer": trainer, "cpu": cpu, "init": init, "final": level16_swd(trainer), **captured}


@pytest.mark.slow
@criterion(9, "desk smoke: < 60 min, finite, resume bit-exact, SWD -30%, progressive <= flat (2 of 3 seeds)")
def test_c9_smoke_runs_and_stays_finite(smoke):
    t = smoke["trainer"]
    losses = np.array([[r["d_loss"], r["g_loss"]] for r in t.history])
    z = sample_latents(64, t.G.spec.latent_size, np.random.default_rng(0))
    print(f"criterion 9: {t.images_shown} images, {t.step_count} steps, {smoke['cpu']:.0f} s CPU, resolution {t.G.resolution}")
    assert t.images_shown >= SMOKE_IMAGES and t.images_shown <= 200_000
    assert t.G.resolution == 16
    assert np.all(np.isfinite(losses))
    assert np.all(np.isfinite(t.generate(z)))
    assert smoke["cpu"] < 3600


@pytest.mark.slow
@criterion(9, "desk smoke: < 60 min, finite, resume bit-exact, SWD -30%, progressive <= flat (2 of 3 seeds)")
def test_c9_resume_bit_exact(smoke):
    resumed = Trainer.from_checkpoint(load_checkpoint(smoke["path"]), smoke_dataset())
    resumed.step()
    resumed.step()
    ref, got = smoke["reference"], resumed.checkpoint()
    assert got.meta == ref.meta
    assert list(got.arrays) == list(ref.arrays)
    assert all(got.arrays[k].tobytes() == ref.arrays[k].tobytes() for k in ref.arrays)
    print(f"criterion 9: resume from step {got.meta['step'] - 2} reproduces step {got.meta['step']} bit-exactly")


@pytest.mark.slow
@criterion(9, "desk smoke: < 60 min, finite, resume bit-exact, SWD -30%, progressive <= flat (2 of 3 seeds)")
def test_c9_swd_improves(smoke):
    ratio = smoke["final"] / smoke["init"]
    print(f"criterion 9: 16x16 SWD x1e3 {smoke['init'] * 1e3:.1f} -> {smoke['final'] * 1e3:.1f} (ratio {ratio:.3f})")
    assert ratio <= 0.7


@pytest.mark.slow
@criterion(9, "desk smoke: < 60 min, finite, resume bit-exact, SWD -30%, progressive <= flat (2 of 3 seeds)")
def test_c9_progressive_vs_flat(smoke):
    wins = 0
    for seed in SMOKE_SEEDS:
        prog = smoke["final"] if seed == 0 else level16_swd(train_smoke(seed, True)[0])
        flat = level16_swd(train_smoke(seed, False)[0])
        wins += prog <= flat
        print(f"criterion 9: seed {seed} 16x16 SWD x1e3 progressive {prog * 1e3:.1f}, non-progressive {flat * 1e3:.1f}")
    assert wins >= 2


# -- 10. LSGAN noise arithmetic --------------------------------------------------


@criterion(10, "d-hat recurrence and magnitude examples (1e-12), zero-magnitude noise identity")
def test_c10_lsgan_noise():
    magnitude, state = adaptive_noise_magnitude(LsganNoiseState(0.5), 1.0)
    assert abs(state.d_hat - 0.55) < 1e-12 and abs(magnitude - 0.0005) < 1e-12
    magnitude, state = adaptive_noise_magnitude(LsganNoiseState(0.2), 0.4)
    assert state.d_hat <= 0.5 and magnitude == 0.0
    magnitude, state = adaptive_noise_magnitude(LsganNoiseState(0.0), 0.0)
    assert (state.d_hat, magnitude) == (0.0, 0.0)
    x = Tensor(np.random.default_rng(10).standard_normal((2, 4, 3, 3)).astype(np.float32))
    assert np.array_equal(multiplicative_noise(x, 0.0, np.random.default_rng(0)).data, x.data)
    print("criterion 10: LSGAN noise arithmetic reproduced")
