"""Checkpoint binary format: round-trip exactness and corruption handling."""
import struct
import zlib

import numpy as np
import pytest

from priordiff.checkpoint import MAGIC, load_checkpoint, load_params_into, save_checkpoint
from priordiff.errors import CheckpointError
from priordiff.networks import ModelBundle, ModelConfig
from priordiff.schedule import linear_schedule

TINY = ModelConfig(
    image_channels=1, prior_channels=4, decoder_channels=8, levels=2,
    unshuffle=4, extractor_width=16, denoiser_width=32,
)
CFG_TEXT = "seed = 3\nstage = s2\n"


@pytest.fixture()
def s2_bundle():
    return ModelBundle.new_stage2(ModelBundle.new_stage1(TINY, seed=3), seed=4)


class TestRoundTrip:
    def test_bit_exact_params_and_schedule(self, tmp_path, s2_bundle):
        sched = linear_schedule(4, 0.1, 0.99)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, s2_bundle, sched, CFG_TEXT)
        loaded_sched, cfg_text, params = load_checkpoint(path)
        assert np.array_equal(loaded_sched.betas, sched.betas)
        assert cfg_text == CFG_TEXT
        assert set(params) == {p.id for p in s2_bundle.params()}
        for p in s2_bundle.params():
            assert np.array_equal(params[p.id], p.data)

    def test_load_into_fresh_bundle(self, tmp_path, s2_bundle):
        sched = linear_schedule(4, 0.1, 0.99)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, s2_bundle, sched, CFG_TEXT)
        _, _, params = load_checkpoint(path)
        fresh = ModelBundle.empty(TINY, "s2")
        load_params_into(fresh, params)
        for a, b in zip(fresh.params(), s2_bundle.params()):
            assert a.id == b.id and np.array_equal(a.data, b.data)

    def test_save_is_byte_deterministic(self, tmp_path, s2_bundle):
        sched = linear_schedule(4, 0.1, 0.99)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, s2_bundle, sched, CFG_TEXT)
        save_checkpoint(p2, s2_bundle, sched, CFG_TEXT)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_prefix(self, tmp_path, s2_bundle):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, s2_bundle, linear_schedule(4), CFG_TEXT)
        assert path.read_bytes()[:4] == MAGIC


class TestCorruption:
    def _saved(self, tmp_path, s2_bundle):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, s2_bundle, linear_schedule(4), CFG_TEXT)
        return path

    def test_crc_mismatch(self, tmp_path, s2_bundle):
        path = self._saved(tmp_path, s2_bundle)
        data = bytearray(path.read_bytes())
        data[100] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="CRC"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path, s2_bundle):
        path = self._saved(tmp_path, s2_bundle)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        blob = bytes(data[:-4])
        path.write_bytes(blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, s2_bundle):
        path = self._saved(tmp_path, s2_bundle)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_param_mismatch_on_load_into(self, tmp_path, s2_bundle):
        path = self._saved(tmp_path, s2_bundle)
        _, _, params = load_checkpoint(path)
        wrong = ModelBundle.empty(TINY, "s1")
        with pytest.raises(CheckpointError, match="mismatch"):
            load_params_into(wrong, params)

    def test_no_partial_file_on_failure(self, tmp_path, s2_bundle):
        target = tmp_path / "sub" / "model.ckpt"
        with pytest.raises(FileNotFoundError):
            save_checkpoint(target, s2_bundle, linear_schedule(4), CFG_TEXT)
        assert not target.exists()
