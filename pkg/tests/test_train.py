"""Tests for the Charbonnier loss, AdamW, the cosine schedule, augmentation and fine-tuning."""

import math

import numpy as np
import pytest

from maeip.autograd import Tensor, backward
from maeip.csvlog import read_csv
from maeip.data.degrade import Task, synth_corpus
from maeip.errors import ConfigError, ShapeError, TapeError
from maeip.model.checkpoint import save_checkpoint
from maeip.model.params import init_params, is_encoder_param
from maeip.pretrain.head import init_head
from maeip.train.augment import NO_AUGMENT, AugmentConfig, augment_batch, geometric, mixup_pair, random_crop_pair
from maeip.train.finetune import (
    CHECKPOINT_NAME,
    LOG_NAME,
    FinetuneConfig,
    FinetuneState,
    evaluate,
    finetune_step,
    init_from_checkpoint,
    load_state,
    make_pairs,
    run_finetune,
    sample_batch,
    save_state,
)
from maeip.train.losses import charbonnier
from maeip.train.optim import OptimState, Schedule, adamw_step, collect_grads, cosine_lr


# =============================================================================
# Loss
# =============================================================================


class TestCharbonnier:
    def test_gradient_direction(self):
        pred = Tensor(np.array([[0.5, -0.5]]), requires_grad=True)
        backward(charbonnier(pred, Tensor(np.zeros((1, 2)))))
        assert pred.grad[0, 0] > 0 > pred.grad[0, 1]
        np.testing.assert_allclose(pred.grad, np.array([[0.5, -0.5]]) / np.sqrt(0.25 + 1e-6) / 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            charbonnier(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1))))


# =============================================================================
# Optimizer and schedule
# =============================================================================


def _param(value):
    return {"p": Tensor(np.array([value], dtype=np.float64), requires_grad=True, name="p")}


class TestAdamW:
    def test_zero_gradient_is_fixed_point(self):
        params = _param(1.5)
        out, _ = adamw_step(params, {"p": np.zeros(1)}, OptimState(), lr=0.1)
        assert out["p"].data[0] == 1.5

    def test_hand_trace(self):
        params, state = _param(1.0), OptimState()
        for expected in (0.9, 0.8):
            params, state = adamw_step(params, {"p": np.array([0.5])}, state, lr=0.1)
            assert params["p"].data[0] == pytest.approx(expected, abs=1e-6)
        assert state.steps == {"p": 2} and state.step == 2

    def test_decoupled_decay(self):
        params = _param(2.0)
        out, _ = adamw_step(params, {"p": np.zeros(1)}, OptimState(weight_decay=0.5), lr=0.1)
        assert out["p"].data[0] == pytest.approx(2.0 * (1 - 0.05))

    def test_late_parameter_gets_own_bias_correction(self):
        params = {**_param(1.0), "q": Tensor(np.array([1.0]), requires_grad=True)}
        params, state = adamw_step(params, {"p": np.array([1.0])}, OptimState(), lr=0.1)
        assert "q" not in state.steps
        params, state = adamw_step(params, {"p": np.array([1.0]), "q": np.array([1.0])}, state, lr=0.1)
        assert state.steps == {"p": 2, "q": 1}
        assert params["q"].data[0] == pytest.approx(0.9, abs=1e-6)

    def test_inputs_not_modified(self):
        params = _param(1.0)
        adamw_step(params, {"p": np.array([1.0])}, OptimState(), lr=0.1)
        assert params["p"].data[0] == 1.0

    def test_state_round_trip(self):
        _, state = adamw_step(_param(1.0), {"p": np.array([0.3])}, OptimState(), lr=0.1)
        again = OptimState.from_arrays(state.to_arrays())
        assert again.steps == state.steps and again.step == state.step
        np.testing.assert_array_equal(again.m["p"], state.m["p"])

    def test_shape_mismatch(self):
        with pytest.raises(TapeError):
            adamw_step(_param(1.0), {"p": np.zeros(2)}, OptimState(), lr=0.1)

    def test_collect_grads_needs_backward(self):
        with pytest.raises(TapeError):
            collect_grads(_param(1.0))


class TestCosine:
    def test_endpoints_and_midpoint(self):
        schedule = Schedule(2e-4, 1e-6, 100)
        assert cosine_lr(0, schedule) == 2e-4
        assert cosine_lr(100, schedule) == 1e-6
        assert cosine_lr(50, schedule) == pytest.approx((2e-4 + 1e-6) / 2)

    def test_monotone(self):
        schedule = Schedule(1.0, 0.0, 20)
        lrs = [cosine_lr(s, schedule) for s in range(21)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    @pytest.mark.parametrize("step", [-1, 101])
    def test_out_of_range(self, step):
        with pytest.raises(ConfigError):
            cosine_lr(step, Schedule(2e-4, 1e-6, 100))

    def test_invalid_schedule(self):
        with pytest.raises(ConfigError):
            Schedule(1e-4, 1e-3, 10).validate()


# =============================================================================
# Augmentation
# =============================================================================


class TestAugment:
    def test_flips_are_involutions(self, rng):
        x = rng.random((3, 5, 5))
        np.testing.assert_array_equal(geometric(geometric(x, hflip=True), hflip=True), x)
        np.testing.assert_array_equal(geometric(geometric(x, vflip=True), vflip=True), x)
        np.testing.assert_array_equal(geometric(x, k=4), x)

    def test_no_augment_is_identity(self, rng):
        c, d = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
        oc, od = augment_batch(c, d, NO_AUGMENT, rng)
        np.testing.assert_array_equal(oc, c)
        np.testing.assert_array_equal(od, d)

    def test_pairs_move_together(self, rng):
        x = rng.random((6, 3, 8, 8))
        c, d = augment_batch(x, x.copy(), AugmentConfig(mixup=True), rng)
        np.testing.assert_array_equal(c, d)

    def test_mixup_of_black_and_white(self):
        assert np.all(mixup_pair(np.zeros(4), np.ones(4), 0.5) == 0.5)

    def test_crop_pair(self, rng):
        clean = np.arange(2 * 6 * 7, dtype=np.float32).reshape(2, 6, 7)
        c, d = random_crop_pair(clean, clean + 1, 4, rng)
        assert c.shape == (2, 4, 4)
        np.testing.assert_array_equal(d, c + 1)
        with pytest.raises(ShapeError):
            random_crop_pair(clean, clean, 7, rng)


# =============================================================================
# Fine-tuning
# =============================================================================


@pytest.fixture
def pairs():
    return make_pairs(Task.DENOISE25, synth_corpus(3, 24, 24, seed=0), seed=0)


def _config(**changes):
    base = {"task": Task.DENOISE25, "crop": 16, "batch": 2, "steps": 4, "lr": 1e-3, "seed": 0}
    return FinetuneConfig(**{**base, **changes})


class TestFinetune:
    def test_make_pairs_is_deterministic(self, pairs):
        again = make_pairs(Task.DENOISE25, synth_corpus(3, 24, 24, seed=0), seed=0)
        for (c1, d1), (c2, d2) in zip(pairs, again):
            np.testing.assert_array_equal(d1, d2)
            assert not np.array_equal(c1, d1)

    def test_pairs_task_needs_degraded(self):
        with pytest.raises(ConfigError):
            make_pairs(Task.PAIRS, synth_corpus(1, 8, 8))

    def test_sample_batch(self, pairs, rng):
        batch = sample_batch(pairs, 3, _config().augment_config(), rng)
        assert batch.clean.shape == batch.degraded.shape == (3, 3, 16, 16)
        assert batch.clean.dtype == np.float32

    def test_step_reports_psnr_before_update(self, nano, pairs, rng):
        batch = sample_batch(pairs, 2, AugmentConfig(False, False, False, crop_size=16), rng)
        state = FinetuneState(init_params(nano), OptimState())
        new, record = finetune_step(batch, state, nano, lr=1e-3)
        # the fresh model returns its input, so the first PSNR is the degraded one
        mse = np.mean((batch.degraded.astype(np.float64) - batch.clean) ** 2)
        assert record.train_psnr == pytest.approx(10 * math.log10(1 / mse), rel=1e-6)
        assert record.step == 0 and new.step == 1
        assert not np.array_equal(new.params["output.weight"].data, state.params["output.weight"].data)

    def test_step_rejects_pretrain_mode(self, nano, pairs, rng):
        batch = sample_batch(pairs, 1, _config().augment_config(), rng)
        config = nano.with_updates(pretrain_mode=True)
        with pytest.raises(ConfigError):
            finetune_step(batch, FinetuneState(init_params(config), OptimState()), config, lr=1e-3)

    def test_state_round_trip(self, nano, tmp_path):
        params = init_params(nano, seed=2)
        _, opt = adamw_step(params, {"embed.bias": np.ones(8, dtype=np.float32)}, OptimState(), lr=0.1)
        save_state(tmp_path / "s.cskpt", FinetuneState(params, opt, 5), nano)
        state, config = load_state(tmp_path / "s.cskpt")
        assert config == nano and state.step == 5
        assert state.opt.steps == {"embed.bias": 1}
        assert all(np.array_equal(state.params[k].data, params[k].data) for k in params)

    def test_state_keeps_optimizer_settings(self, nano, tmp_path):
        params = init_params(nano, seed=2)
        opt = OptimState(betas=(0.8, 0.99), eps=1e-6, weight_decay=0.05)
        _, opt = adamw_step(params, {"embed.bias": np.ones(8, dtype=np.float32)}, opt, lr=0.1)
        save_state(tmp_path / "s.cskpt", FinetuneState(params, opt, 1), nano)
        state, _ = load_state(tmp_path / "s.cskpt", weight_decay=0.0)
        assert state.opt.betas == (0.8, 0.99)
        assert state.opt.eps == 1e-6 and state.opt.weight_decay == 0.05

    def test_run_writes_outputs(self, nano, pairs, tmp_path):
        result = run_finetune(pairs, nano, _config(out_dir=str(tmp_path)), show_progress=False)
        assert len(result.log) == 4
        assert result.checkpoint == tmp_path / CHECKPOINT_NAME
        rows = read_csv(tmp_path / LOG_NAME)
        assert [r["step"] for r in rows] == ["0", "1", "2", "3"]
        assert float(rows[0]["lr"]) == pytest.approx(1e-3)

    def test_resume_matches_uninterrupted(self, nano, pairs, tmp_path):
        config = _config(out_dir=str(tmp_path / "full"))
        full = run_finetune(pairs, nano, config, show_progress=False)

        schedule, augment = config.schedule(), config.augment_config()
        state = FinetuneState(init_params(nano, config.seed), OptimState())
        while state.step < 2:
            batch = sample_batch(pairs, config.batch, augment, np.random.default_rng([config.seed, state.step]))
            state, _ = finetune_step(batch, state, nano, cosine_lr(state.step, schedule))
        save_state(tmp_path / "half.cskpt", state, nano)
        resumed, _ = load_state(tmp_path / "half.cskpt")
        result = run_finetune(pairs, nano, _config(), state=resumed, show_progress=False)

        assert len(result.log) == 2 and result.log[0].step == 2
        for name, p in full.state.params.items():
            np.testing.assert_array_equal(result.state.params[name].data, p.data)

    def test_init_from_encoder_checkpoint(self, nano, tmp_path):
        pre = init_params(nano, seed=9)
        entries = {k: v for k, v in pre.items() if is_encoder_param(k)} | init_head(nano)
        save_checkpoint(tmp_path / "pre.cskpt", entries)
        params = init_params(nano, seed=0)
        report = init_from_checkpoint(params, tmp_path / "pre.cskpt")
        assert set(report.loaded) == {k for k in params if is_encoder_param(k)}
        assert set(report.fresh) == {k for k in params if not is_encoder_param(k)}
        assert report.unused == ["head.bias", "head.weight"]
        np.testing.assert_array_equal(params["embed.weight"].data, pre["embed.weight"].data)

    def test_evaluate(self, nano, nano_params, pairs):
        records = evaluate(nano_params, nano, pairs)
        assert [r.name for r in records] == ["0000", "0001", "0002"]
        assert all(r.psnr < 40 for r in records)

    def test_config_from_dict(self):
        config = FinetuneConfig.from_dict({"task": "derain", "steps": 10, "out_dir": None})
        assert config.task is Task.DERAIN and config.steps == 10
        with pytest.raises(ConfigError):
            FinetuneConfig.from_dict({"task": "pairs"})
        with pytest.raises(ConfigError):
            FinetuneConfig.from_dict({"task": "deblur"})

    @pytest.mark.slow
    def test_overfit(self):
        from maeip.benchmark import overfit

        assert overfit().passed

    def test_calibration_csv(self, tmp_path):
        from maeip.benchmark import calibrate

        path = tmp_path / "calibration.csv"
        calibrate(path, overfit_preset="csformer-nano", suite_inputs=1, overfit_steps=2, overfit_images=2)
        rows = read_csv(path)
        assert [r["check"] for r in rows] == ["gradient_suite", "overfit_2"]
        assert all(float(r["seconds"]) > 0 for r in rows)
        assert float(rows[0]["value"]) < float(rows[0]["threshold"])
        assert rows[1]["passed"] == "False"
