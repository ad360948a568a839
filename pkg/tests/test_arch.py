"""Tests for the CSformer config, parameters, forward pass and checkpoints."""

import numpy as np
import pytest

from maeip.autograd import Tensor
from maeip.errors import CheckpointError, ConfigError, ShapeError
from maeip.model.checkpoint import load_checkpoint, load_into, save_checkpoint, sidecar_path
from maeip.model.config import AttnKind, AttnMode, Compose, ModelConfig, get_preset
from maeip.model.csformer import model_forward
from maeip.model.params import count_params, init_params, is_encoder_param, param_shapes, total_size


# =============================================================================
# Config
# =============================================================================


class TestModelConfig:
    def test_stage_levels(self):
        assert [ModelConfig.stage_level(s) for s in range(9)] == [0, 1, 2, 3, 4, 3, 2, 1, 0]

    def test_block_kinds_alternate(self, nano):
        assert nano.block_kind(0, 0) is AttnKind.W
        assert nano.block_kind(0, 1) is AttnKind.SW
        assert nano.block_kind(4, 0) is AttnKind.G

    def test_dict_round_trip(self):
        config = ModelConfig(
            base_channels=4,
            attn_compose=Compose.SEQUENTIAL,
            attn_mode_per_level=(AttnMode.WINDOWED, AttnMode.GLOBAL, AttnMode.GLOBAL, AttnMode.GLOBAL, AttnMode.GLOBAL),
            heads_per_stage=(1, 1, 1, 1, 1),
        )
        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            ModelConfig.from_dict({"base_channel": 8})

    @pytest.mark.parametrize(
        "changes",
        [
            {"base_channels": 3},
            {"window_size": 7},
            {"heads_per_stage": (3, 1, 1, 1, 1)},
            {"blocks_per_stage": (1,) * 4},
            {"out_channels": 4},
        ],
    )
    def test_invalid_values(self, nano, changes):
        with pytest.raises(ConfigError):
            nano.with_updates(**changes)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            get_preset("csformer-huge")


# =============================================================================
# Parameters
# =============================================================================


class TestParams:
    @pytest.mark.parametrize(
        "changes",
        [{}, {"rel_pos_bias": True}, {"ffn_bias": False}, {"gcffn_expansion": 2.66}, {"in_channels": 1, "out_channels": 1}],
    )
    def test_closed_form_count(self, nano, changes):
        config = nano.with_updates(**changes)
        assert count_params(config) == total_size(init_params(config).values())

    def test_shapes(self, nano):
        shapes = param_shapes(nano)
        assert shapes["embed.weight"] == (8, 3, 3, 3)
        assert shapes["down0.weight"] == (16, 32, 1, 1)
        assert shapes["up3.weight"] == (256, 128, 1, 1)
        assert shapes["fuse0.weight"] == (8, 16, 1, 1)
        assert shapes["stage4.block0.msa.qkv.weight"] == (128, 384)
        assert shapes["output.weight"] == (3, 8, 3, 3)

    def test_seeded_init_is_reproducible(self, nano):
        a, b = init_params(nano, seed=3), init_params(nano, seed=3)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_output_conv_starts_at_zero(self, nano_params):
        assert not nano_params["output.weight"].data.any()
        assert not nano_params["output.bias"].data.any()

    def test_attention_init_is_truncated(self, nano_params):
        w = nano_params["stage0.block0.msa.qkv.weight"].data
        assert np.abs(w).max() <= 0.04 + 1e-7

    def test_encoder_split(self):
        assert is_encoder_param("stage4.block0.ln1.weight")
        assert is_encoder_param("down3.weight")
        assert not is_encoder_param("stage5.block0.ln1.weight")
        assert not is_encoder_param("up3.weight")
        assert not is_encoder_param("output.weight")


# =============================================================================
# Forward pass
# =============================================================================


class TestForward:
    @pytest.mark.parametrize("hw", [(16, 16), (17, 23)])
    def test_zero_output_conv_is_identity(self, nano, nano_params, rng, hw):
        image = Tensor(rng.random((2, 3, *hw), dtype=np.float32))
        out = model_forward(image, nano_params, nano)
        np.testing.assert_array_equal(out.restored.data, image.data)
        assert out.residual.shape == image.shape

    def test_pretrain_mode_returns_decoder_output(self, nano, nano_params, rng):
        config = nano.with_updates(pretrain_mode=True)
        image = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32))
        out = model_forward(image, nano_params, config)
        assert not out.restored.data.any()

    def test_encoder_only(self, nano, nano_params, rng):
        out = model_forward(Tensor(rng.random((1, 3, 32, 32), dtype=np.float32)), nano_params, nano, encoder_only=True)
        assert out.restored is None and out.residual is None
        assert out.latent.shape == (1, 128, 2, 2)

    def test_output_depends_on_input(self, nano, live_params, rng):
        a = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32))
        b = Tensor(a.data.copy())
        b.data[0, 0, 0, 0] += 0.5
        ra = model_forward(a, live_params, nano).residual.data
        rb = model_forward(b, live_params, nano).residual.data
        assert not np.array_equal(ra, rb)

    def test_batch_items_are_independent(self, nano, live_params, rng):
        batch = rng.random((2, 3, 16, 16), dtype=np.float32)
        both = model_forward(Tensor(batch), live_params, nano).restored.data
        first = model_forward(Tensor(batch[:1]), live_params, nano).restored.data
        np.testing.assert_allclose(both[:1], first, atol=1e-5)

    @pytest.mark.parametrize("n", [1, 2])
    def test_one_pixel_bottleneck(self, nano, live_params, rng, n):
        image = Tensor(rng.random((n, 3, 16, 16), dtype=np.float32))
        out = model_forward(image, live_params, nano)
        assert out.latent.shape == (n, 128, 1, 1)
        assert out.restored.shape == image.shape
        assert np.all(np.isfinite(out.restored.data)) and out.residual.data.any()

    def test_sequential_compose_runs(self, tiny, rng):
        config = tiny.with_updates(attn_compose=Compose.SEQUENTIAL, rel_pos_bias=True)
        out = model_forward(Tensor(rng.random((1, 3, 12, 12), dtype=np.float32)), init_params(config), config)
        assert out.restored.shape == (1, 3, 12, 12)

    def test_channel_mismatch(self, nano, nano_params):
        with pytest.raises(ShapeError):
            model_forward(Tensor(np.zeros((1, 1, 16, 16))), nano_params, nano)


# =============================================================================
# Checkpoints
# =============================================================================


class TestCheckpoint:
    def test_round_trip_is_bit_identical(self, nano, nano_params, tmp_path):
        path = tmp_path / "m.cskpt"
        optim = {"m.embed.weight": np.ones((8, 3, 3, 3), dtype=np.float32), "step.embed.weight": np.array(7)}
        save_checkpoint(path, nano_params, nano, optim=optim, meta={"step": 7})
        ckpt = load_checkpoint(path)
        assert set(ckpt.params) == set(nano_params)
        for name, t in nano_params.items():
            assert ckpt.params[name].dtype == t.dtype
            np.testing.assert_array_equal(ckpt.params[name], t.data)
        assert ckpt.optim["step.embed.weight"] == 7
        assert ckpt.config == nano
        assert ckpt.meta == {"step": 7}
        assert sidecar_path(path).name == "m.cskpt.json"

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.cskpt"
        path.write_bytes(b"hello world")
        with pytest.raises(CheckpointError, match="not a CSFK1"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v2.cskpt"
        path.write_bytes(b"CSFK2" + b"\x00" * 4)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, nano_params, tmp_path):
        path = tmp_path / "t.cskpt"
        save_checkpoint(path, nano_params)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.cskpt")

    def test_load_into_report(self, nano):
        params = init_params(nano, seed=0)
        arrays = {"embed.weight": np.full((8, 3, 3, 3), 0.5, dtype=np.float32), "head.weight": np.zeros(2)}
        report = load_into(params, arrays)
        assert report.loaded == ["embed.weight"]
        assert report.unused == ["head.weight"]
        assert len(report.fresh) == len(params) - 1
        assert np.all(params["embed.weight"].data == 0.5)

    def test_load_into_shape_mismatch(self, nano_params):
        with pytest.raises(CheckpointError, match="shape"):
            load_into(nano_params, {"embed.weight": np.zeros((1, 1))})

    def test_load_into_strict(self, nano_params):
        with pytest.raises(CheckpointError, match="lacks"):
            load_into(nano_params, {}, strict=True)
