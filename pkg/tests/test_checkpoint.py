"""Checkpoint format: round trips and corruption handling."""

import numpy as np
import pytest

from ioh_forecast.checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from ioh_forecast.network import ModelConfig, init_params


def small_config(**overrides):
    base = dict(context_len=20, horizon=10, patch_len=5, d_model=8,
                n_layers=1, n_heads=2, d_ff=16, decomp_window=5, seed=4)
    base.update(overrides)
    return ModelConfig(**base)


class TestCheckpointRoundTrip:
    def test_arrays_bit_identical(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, cfg, path)
        loaded, loaded_cfg = load_checkpoint(path)
        assert loaded_cfg == cfg
        for (name_a, a), (name_b, b) in zip(params.named_tensors(),
                                            loaded.named_tensors()):
            assert name_a == name_b
            np.testing.assert_array_equal(a.data, b.data)

    def test_loaded_params_require_grad(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(cfg), cfg, path)
        loaded, _ = load_checkpoint(path)
        assert all(t.requires_grad for t in loaded.tensors())

    def test_save_is_deterministic(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, cfg, p1)
        save_checkpoint(params, cfg, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestCheckpointValidation:
    def test_truncated_file_is_load_error(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(cfg), cfg, path)
        data = path.read_bytes()
        for cut in (3, 8, len(data) // 2, len(data) - 10):
            short = tmp_path / "cut.ckpt"
            short.write_bytes(data[:cut])
            with pytest.raises(CheckpointError):
                load_checkpoint(short)

    def test_bad_magic_rejected(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(cfg), cfg, path)
        data = bytearray(path.read_bytes())
        data[0] = ord("X")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(cfg), cfg, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_shape_mismatch_against_expected_config(self, tmp_path):
        cfg = small_config(d_model=8)
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(cfg), cfg, path)
        other = small_config(d_model=16)
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(path, expected_config=other)

    def test_trailing_garbage_rejected(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(cfg), cfg, path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)
