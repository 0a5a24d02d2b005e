import struct

import numpy as np
import pytest

from prograde.checkpoint import MAGIC, Checkpoint, CheckpointVersionError, load_checkpoint, save_checkpoint


@pytest.fixture
def ckpt(rng):
    return Checkpoint(
        {
            "G/w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
            "opt/m": rng.standard_normal(7),
            "order": np.arange(5, dtype=np.int64),
            "scalar": np.array(3.5, dtype=np.float32),
        },
        {"step": 12, "rng": {"state": 2**100}, "fade": None},
    )


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, ckpt):
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.meta == ckpt.meta
        assert list(back.arrays) == list(ckpt.arrays)
        for name, arr in ckpt.arrays.items():
            assert back.arrays[name].dtype == arr.dtype
            assert back.arrays[name].tobytes() == arr.tobytes()

    def test_big_endian_input_stored_little(self, tmp_path):
        arr = np.arange(4, dtype=">f4")
        save_checkpoint(tmp_path / "a.ckpt", Checkpoint({"x": arr}))
        back = load_checkpoint(tmp_path / "a.ckpt").arrays["x"]
        np.testing.assert_array_equal(back, arr)

    def test_atomic_write_leaves_no_temp(self, tmp_path, ckpt):
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        assert [p.name for p in tmp_path.iterdir()] == ["a.ckpt"]

    def test_identical_bytes_for_identical_state(self, tmp_path, ckpt):
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        save_checkpoint(tmp_path / "b.ckpt", ckpt)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_version_mismatch(self, tmp_path, ckpt):
        save_checkpoint(tmp_path / "a.ckpt", Checkpoint(ckpt.arrays, ckpt.meta, format_version=99))
        with pytest.raises(CheckpointVersionError, match="version 99"):
            load_checkpoint(tmp_path / "a.ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"hello world, definitely not a checkpoint")
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_header_layout(self, tmp_path, ckpt):
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        data = (tmp_path / "a.ckpt").read_bytes()
        assert data[:8] == MAGIC
        version, _ = struct.unpack_from("<IQ", data, 8)
        assert version == 1
