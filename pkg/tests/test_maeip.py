"""Tests for patch masking, the encoder head, the MAEIP losses and the pre-training loop."""

import numpy as np
import pytest

from maeip.autograd import Tensor, backward, ops
from maeip.csvlog import read_csv
from maeip.data.degrade import synth_corpus
from maeip.errors import ConfigError, MaskError, ShapeError
from maeip.model.params import init_params, is_encoder_param
from maeip.pretrain.head import HEAD_PATCH, encoder_reconstruct, init_head
from maeip.pretrain.losses import maeip_losses, masked_mse
from maeip.pretrain.masking import FillMode, MaskConfig, apply_mask, masked_patch_count, sample_mask
from maeip.pretrain.pretrain import (
    PretrainConfig,
    PretrainState,
    make_pretrain_batch,
    pretrain_step,
    run_pretrain,
    write_loss_csv,
)
from maeip.pretrain.stages import PretrainStage, PretrainVariant, two_stage_schedule, variant_schedule
from maeip.train.optim import OptimState


# =============================================================================
# Masking
# =============================================================================


class TestSampleMask:
    def test_count_at_192(self):
        spec = sample_mask(192, 192, 0.75, 16, seed=0)
        assert spec.total == 144
        assert spec.masked_count == 108
        assert spec.pixel_map().shape == (192, 192)

    def test_zero_ratio_masks_nothing(self):
        assert sample_mask(64, 64, 0.0, 16, seed=1).masked_count == 0

    def test_full_ratio_masks_everything(self):
        assert sample_mask(32, 48, 1.0, 16, seed=1).masked_count == 6

    def test_rounding(self):
        assert masked_patch_count(6, 0.75) == 5  # 4.5 rounds up
        assert masked_patch_count(4, 0.75) == 3

    def test_uniform_over_patches(self):
        rng = np.random.default_rng(0)
        hits = sum(sample_mask(64, 64, 0.75, 16, rng).grid.astype(int) for _ in range(2000))
        np.testing.assert_allclose(hits / 2000, 0.75, atol=0.04)

    def test_seed_is_reproducible(self):
        a, b = sample_mask(64, 64, seed=5), sample_mask(64, 64, seed=5)
        np.testing.assert_array_equal(a.grid, b.grid)

    def test_indivisible_size(self):
        with pytest.raises(ShapeError):
            sample_mask(40, 64, 0.75, 16)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, 1.5, -0.25])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ConfigError):
            MaskConfig(ratio=ratio).validate()

    def test_ten_thousand_masks_at_192(self):
        rng = np.random.default_rng(0)
        hits = np.zeros((12, 12))
        for _ in range(10_000):
            spec = sample_mask(192, 192, 0.75, 16, rng)
            assert spec.total == 144
            assert spec.masked_count == 108
            hits += spec.grid
        freq = hits / 10_000
        assert freq.min() >= 0.73 and freq.max() <= 0.77


class TestApplyMask:
    def test_zero_ratio_is_identity(self, rng):
        x = Tensor(rng.random((1, 3, 32, 32), dtype=np.float32))
        np.testing.assert_array_equal(apply_mask(x, sample_mask(32, 32, 0.0, seed=0)).data, x.data)

    def test_full_mask_zeroes(self, rng):
        x = Tensor(rng.random((1, 3, 32, 32), dtype=np.float32))
        assert not apply_mask(x, sample_mask(32, 32, 1.0, seed=0)).data.any()

    def test_matches_pixel_oracle(self, rng):
        x = Tensor(rng.random((1, 3, 48, 32), dtype=np.float32))
        spec = sample_mask(48, 32, 0.5, 16, seed=3)
        out = apply_mask(x, spec).data
        hidden = spec.pixel_map().astype(bool)
        assert not out[..., hidden].any()
        np.testing.assert_array_equal(out[..., ~hidden], x.data[..., ~hidden])

    def test_idempotent(self, rng):
        x = Tensor(rng.random((2, 3, 32, 32), dtype=np.float32))
        specs = [sample_mask(32, 32, seed=s) for s in (0, 1)]
        once = apply_mask(x, specs)
        np.testing.assert_array_equal(apply_mask(once, specs).data, once.data)

    def test_learned_fill(self, rng):
        x = Tensor(rng.random((1, 3, 32, 32), dtype=np.float32))
        spec = sample_mask(32, 32, 0.5, seed=2)
        fill = Tensor(np.array([0.1, 0.2, 0.3], dtype=np.float32), requires_grad=True)
        out = apply_mask(x, spec, fill)
        hidden = spec.pixel_map().astype(bool)
        np.testing.assert_allclose(out.data[0][:, hidden].mean(axis=1, dtype=np.float64), fill.data, rtol=1e-6)
        np.testing.assert_array_equal(out.data[..., ~hidden], x.data[..., ~hidden])
        backward(ops.sum(out))
        np.testing.assert_allclose(fill.grad, np.full(3, hidden.sum()))

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_mask(Tensor(np.zeros((1, 3, 32, 32))), sample_mask(16, 16, seed=0))


# =============================================================================
# Encoder head
# =============================================================================


class TestHead:
    def test_zero_weights_give_bias(self, nano):
        head = init_head(nano)
        head["head.weight"] = Tensor(np.zeros(head["head.weight"].shape, dtype=np.float32))
        out = encoder_reconstruct(Tensor(np.ones((1, 128, 2, 3), dtype=np.float32)), head)
        assert out.shape == (1, 3, 32, 48)
        assert not out.data.any()

    def test_token_fills_its_own_patch(self, nano, rng):
        head = init_head(nano)
        latent = rng.standard_normal((1, 128, 2, 2)).astype(np.float32)
        moved = latent.copy()
        moved[0, :, 1, 0] += 1.0
        diff = encoder_reconstruct(Tensor(moved), head).data - encoder_reconstruct(Tensor(latent), head).data
        changed = np.abs(diff).sum(axis=(0, 1)) > 0
        expected = np.zeros((32, 32), dtype=bool)
        expected[HEAD_PATCH:, :HEAD_PATCH] = True
        np.testing.assert_array_equal(changed, expected)

    def test_crop_to_image(self, nano, rng):
        out = encoder_reconstruct(Tensor(rng.standard_normal((1, 128, 2, 2)).astype(np.float32)), init_head(nano), (20, 30))
        assert out.shape == (1, 3, 20, 30)

    def test_width_mismatch(self, nano):
        with pytest.raises(ShapeError):
            encoder_reconstruct(Tensor(np.zeros((1, 64, 2, 2))), init_head(nano))


# =============================================================================
# Losses and schedules
# =============================================================================


class TestLosses:
    def test_masked_mse_oracle(self, rng):
        pred, clean = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
        mask = (rng.random((2, 1, 4, 4)) > 0.5).astype(np.float64)
        mask[0, 0, 0, 0] = 1.0
        loss = masked_mse(Tensor(pred), Tensor(clean), mask).item()
        m = np.broadcast_to(mask, pred.shape).astype(bool)
        assert loss == pytest.approx(np.mean((pred[m] - clean[m]) ** 2), rel=1e-12)

    def test_unmasked_pixels_do_not_count(self, rng):
        clean = rng.random((1, 3, 4, 4))
        mask = np.zeros((1, 1, 4, 4))
        mask[..., :2, :] = 1.0
        a = clean + 0.1
        b = a.copy()
        b[..., 2:, :] += 5.0
        assert masked_mse(Tensor(a), Tensor(clean), mask).item() == masked_mse(Tensor(b), Tensor(clean), mask).item()

    def test_empty_mask_rejected(self):
        with pytest.raises(MaskError):
            masked_mse(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.ones((1, 3, 4, 4))), np.zeros((1, 1, 4, 4)))

    def test_stage_totals(self, rng):
        clean = Tensor(rng.random((1, 3, 4, 4)))
        enc, dec = Tensor(rng.random((1, 3, 4, 4))), Tensor(rng.random((1, 3, 4, 4)))
        mask = np.ones((1, 1, 4, 4))
        only_enc = maeip_losses(enc, None, clean, mask, PretrainStage.ENCODER_ONLY)
        assert only_enc.loss_dec is None
        joint = maeip_losses(enc, dec, clean, mask, PretrainStage.JOINT, lambda_dec=0.5)
        assert joint.total.item() == pytest.approx(joint.loss_enc.item() + 0.5 * joint.loss_dec.item())
        dropped = maeip_losses(None, dec, clean, mask, PretrainStage.JOINT, keep_encoder_loss=False)
        assert dropped.loss_enc is None
        assert dropped.total.item() == pytest.approx(dropped.loss_dec.item())

    def test_missing_prediction(self, rng):
        with pytest.raises(ShapeError):
            maeip_losses(None, None, Tensor(rng.random((1, 3, 4, 4))), np.ones((1, 1, 4, 4)), PretrainStage.ENCODER_ONLY)


class TestSchedule:
    def test_even_split(self):
        stages = two_stage_schedule(100, 0.5)
        assert stages.count(PretrainStage.ENCODER_ONLY) == 50
        assert stages[:50] == [PretrainStage.ENCODER_ONLY] * 50
        assert stages[50:] == [PretrainStage.JOINT] * 50

    def test_zero_split_is_one_stage(self):
        assert two_stage_schedule(7, 0.0) == [PretrainStage.JOINT] * 7

    def test_floor(self):
        assert two_stage_schedule(5, 0.5).count(PretrainStage.ENCODER_ONLY) == 2

    @pytest.mark.parametrize("split", [1.0, -0.1])
    def test_bad_split(self, split):
        with pytest.raises(ConfigError):
            two_stage_schedule(10, split)

    def test_variants(self):
        assert variant_schedule(PretrainVariant.NONE, 4) == []
        assert variant_schedule(PretrainVariant.DECODER, 2) == [PretrainStage.DECODER_ONLY] * 2
        assert variant_schedule(PretrainVariant.ENCODER, 2) == [PretrainStage.ENCODER_ONLY] * 2
        assert variant_schedule(PretrainVariant.MAEIP, 2) == [PretrainStage.JOINT] * 2


# =============================================================================
# Pre-training step and loop
# =============================================================================


@pytest.fixture
def pretrain_config(nano):
    return nano.with_updates(pretrain_mode=True)


@pytest.fixture
def batch(rng):
    clean = rng.random((1, 3, 32, 32), dtype=np.float32)
    return make_pretrain_batch(clean, MaskConfig(), rng)


def _state(config):
    return PretrainState(init_params(config), init_head(config), OptimState())


class TestPretrainStep:
    def test_batch_masks(self, batch):
        assert batch.mask_map.shape == (1, 1, 32, 32)
        assert batch.specs[0].masked_count == 3
        hidden = batch.mask_map[0, 0].astype(bool)
        assert not batch.masked.data[0][:, hidden].any()

    def test_zero_lr_keeps_params(self, pretrain_config, batch):
        state = _state(pretrain_config)
        new, record = pretrain_step(batch, state, PretrainStage.JOINT, pretrain_config, lr=0.0)
        for name, p in state.params.items():
            np.testing.assert_array_equal(new.params[name].data, p.data)
        assert record.loss_enc is not None and record.loss_dec is not None

    def test_encoder_only_leaves_decoder_alone(self, pretrain_config, batch):
        state = _state(pretrain_config)
        new, record = pretrain_step(batch, state, PretrainStage.ENCODER_ONLY, pretrain_config, lr=1e-3)
        assert record.loss_dec is None
        for name, p in state.params.items():
            if is_encoder_param(name):
                assert p.grad is not None, name
            else:
                assert p.grad is None, name
                assert new.params[name] is p
        assert not np.array_equal(new.head["head.weight"].data, state.head["head.weight"].data)

    def test_joint_updates_decoder(self, pretrain_config, batch):
        state = _state(pretrain_config)
        new, _ = pretrain_step(batch, state, PretrainStage.JOINT, pretrain_config, lr=1e-3)
        assert not np.array_equal(new.params["output.weight"].data, state.params["output.weight"].data)

    def test_needs_pretrain_mode(self, nano, batch):
        with pytest.raises(ConfigError):
            pretrain_step(batch, _state(nano), PretrainStage.JOINT, nano, lr=0.0)


class TestRunPretrain:
    def test_two_stage_history(self, nano, tmp_path):
        corpus = synth_corpus(3, 32, 32, seed=0)
        config = PretrainConfig(epochs=2, crop=32, batch=1, steps_per_epoch=1, seed=0)
        result = run_pretrain(corpus, nano, config, show_progress=False)
        assert [e.stage for e in result.history] == [PretrainStage.ENCODER_ONLY, PretrainStage.JOINT]
        assert result.history[0].loss_dec is None and result.history[0].loss_enc is not None
        assert result.history[1].loss_dec is not None
        path = write_loss_csv(tmp_path / "loss.csv", result.history)
        rows = read_csv(path)
        assert rows[0]["loss_dec"] == "" and rows[1]["epoch"] == "1"

    def test_encoder_variant_never_touches_decoder(self, nano):
        corpus = synth_corpus(2, 32, 32, seed=1)
        config = PretrainConfig(epochs=2, crop=32, batch=1, steps_per_epoch=1, variant=PretrainVariant.ENCODER)
        fresh = init_params(nano.with_updates(pretrain_mode=True), config.seed)
        result = run_pretrain(corpus, nano, config, show_progress=False)
        for name, p in result.state.params.items():
            if not is_encoder_param(name):
                np.testing.assert_array_equal(p.data, fresh[name].data)

    def test_learned_fill_trains(self, nano):
        corpus = synth_corpus(2, 32, 32, seed=2)
        config = PretrainConfig(epochs=1, crop=32, batch=1, steps_per_epoch=2, fill_mode=FillMode.LEARNED)
        result = run_pretrain(corpus, nano, config, show_progress=False)
        assert result.state.fill is not None and result.state.fill.data.any()

    def test_deterministic(self, nano):
        corpus = synth_corpus(2, 32, 32, seed=3)
        config = PretrainConfig(epochs=2, crop=32, batch=1, steps_per_epoch=1, seed=4)
        a = run_pretrain(corpus, nano, config, show_progress=False).state.params
        b = run_pretrain(corpus, nano, config, show_progress=False).state.params
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_empty_corpus(self, nano):
        with pytest.raises(ConfigError):
            run_pretrain([], nano, PretrainConfig(crop=32), show_progress=False)

    def test_config_from_dict(self):
        config = PretrainConfig.from_dict({"epochs": 4, "variant": "two_stage", "fill_mode": "learned", "crop": 32})
        assert config.variant is PretrainVariant.TWO_STAGE and config.fill_mode is FillMode.LEARNED
        with pytest.raises(ConfigError):
            PretrainConfig.from_dict({"epoch": 4})
        with pytest.raises(ConfigError):
            PretrainConfig.from_dict({"crop": 40})
