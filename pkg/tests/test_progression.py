import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prograde.progression import (
    REDUCED_PHASE_LENGTH,
    ScheduleConfig,
    ThroughputLog,
    minibatch_size_for,
    state_at,
    throughput_log,
)

FULL = ScheduleConfig(max_resolution=1024)
REDUCED = ScheduleConfig(phase_length=REDUCED_PHASE_LENGTH, max_resolution=1024)

# phase index -> (resolution, phase) for the alternating schedule starting at 4x4
PHASE_TABLE = [
    (4, "stabilize"),
    (8, "fade"),
    (8, "stabilize"),
    (16, "fade"),
    (16, "stabilize"),
    (32, "fade"),
    (32, "stabilize"),
    (64, "fade"),
    (64, "stabilize"),
    (128, "fade"),
    (128, "stabilize"),
    (256, "fade"),
    (256, "stabilize"),
    (512, "fade"),
    (512, "stabilize"),
    (1024, "fade"),
    (1024, "stabilize"),
]


class TestStateAt:
    def test_start(self):
        s = state_at(0, FULL)
        assert (s.resolution, s.phase, s.alpha) == (4, "stabilize", 1.0)

    def test_mid_first_fade(self):
        s = state_at(1_200_000, FULL)
        assert (s.resolution, s.phase, s.alpha) == (8, "fade", 0.5)

    def test_reduced_phase_length(self):
        s = state_at(900_000, REDUCED)
        assert (s.resolution, s.phase, s.alpha) == (8, "fade", 0.5)

    @pytest.mark.parametrize("config", [FULL, REDUCED], ids=["800k", "600k"])
    def test_every_boundary_within_8m(self, config):
        L = config.phase_length
        for p in range(1, 8_000_000 // L + 1):
            boundary = p * L
            prev_res, prev_phase = PHASE_TABLE[p - 1]
            res, phase = PHASE_TABLE[p]
            before, at, after = (state_at(n, config) for n in (boundary - 1, boundary, boundary + 1))
            assert (before.resolution, before.phase) == (prev_res, prev_phase)
            assert (at.resolution, at.phase) == (res, phase)
            assert (after.resolution, after.phase) == (res, phase)
            if prev_phase == "fade":
                assert before.alpha == (L - 1) / L
            if phase == "fade":
                assert at.alpha == 0.0 and after.alpha == 1 / L
            else:
                assert at.alpha == after.alpha == 1.0

    def test_terminal_stabilize(self):
        cfg = ScheduleConfig(phase_length=100, max_resolution=16)
        assert state_at(499, cfg).resolution == 16
        for n in (500, 501, 10**9):
            s = state_at(n, cfg)
            assert (s.resolution, s.phase, s.alpha) == (16, "stabilize", 1.0)

    def test_non_progressive(self):
        s = state_at(0, ScheduleConfig(max_resolution=64, progressive=False))
        assert (s.resolution, s.phase) == (64, "stabilize")

    def test_negative(self):
        with pytest.raises(ValueError):
            state_at(-1)

    @settings(max_examples=200, deadline=None)
    @given(a=st.integers(0, 20_000_000), b=st.integers(0, 20_000_000))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        s0, s1 = state_at(lo, FULL), state_at(hi, FULL)
        assert s0.resolution <= s1.resolution
        assert s0.phase_index <= s1.phase_index
        if s0.phase_index == s1.phase_index:
            assert s0.alpha <= s1.alpha

    def test_alpha_increases_linearly_through_fade(self):
        L = FULL.phase_length
        alphas = [state_at(L + k * L // 8, FULL).alpha for k in range(8)]
        assert alphas == [k / 8 for k in range(8)]

    def test_resolution_doubles_at_fade_starts(self):
        L = FULL.phase_length
        for p in (1, 3, 5, 7):
            assert state_at(p * L, FULL).resolution == 2 * state_at(p * L - 1, FULL).resolution


class TestMinibatch:
    @pytest.mark.parametrize(
        "res,size", [(4, 16), (8, 16), (16, 16), (32, 16), (64, 16), (128, 16), (256, 14), (512, 6), (1024, 3)]
    )
    def test_default_map(self, res, size):
        assert minibatch_size_for(res) == size

    def test_override(self):
        assert minibatch_size_for(64, {64: 32}) == 32

    def test_invalid(self):
        with pytest.raises(ValueError):
            minibatch_size_for(48)


class TestThroughput:
    def test_empty(self):
        assert throughput_log([]) == []

    def test_ties_preserved_in_order(self):
        recs = throughput_log([(10, 1.0), (20, 1.0)])
        assert [r.images_shown for r in recs] == [10, 20]

    def test_regression(self):
        with pytest.raises(ValueError):
            throughput_log([(20, 1.0), (10, 2.0)])

    def test_csv_append(self, tmp_path):
        path = tmp_path / "t.csv"
        log = ThroughputLog()
        log.append(16, 0.5, 4)
        log.write_csv(path)
        log.write_csv(path, append=True)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["images_shown", "wall_time", "resolution"]
        assert len(rows) == 3
