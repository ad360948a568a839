"""Tests for degradations, the synthetic corpus, metrics and PNG I/O."""

import math

import numpy as np
import pytest

from maeip.data.degrade import (
    RainParams,
    Task,
    degrade_awgn,
    degrade_for_task,
    degrade_rain,
    rasterize_streak,
    synth_corpus,
)
from maeip.data.images import ImageBuffer, list_pngs, load_dir, load_pairs, load_png, save_png
from maeip.data.metrics import aggregate, evaluate_pair, mae, psnr, ssim
from maeip.errors import ConfigError, ImageError, ShapeError


# =============================================================================
# Degradations
# =============================================================================


class TestDegrade:
    def test_task_parse(self):
        assert Task.parse("denoise-blind") is Task.DENOISE_BLIND
        with pytest.raises(ConfigError):
            Task.parse("deblur")

    def test_zero_sigma_is_a_copy(self, rng):
        clean = rng.random((3, 8, 8), dtype=np.float32)
        out = degrade_awgn(clean, 0, rng)
        assert out is not clean
        np.testing.assert_array_equal(out, clean)

    def test_awgn_statistics(self, rng):
        clean = np.full((3, 128, 128), 0.5, dtype=np.float32)
        noisy = degrade_awgn(clean, 25, rng)
        assert noisy.dtype == np.float32
        assert np.std(noisy - clean) == pytest.approx(25 / 255, rel=0.02)
        assert psnr(noisy, clean) == pytest.approx(20 * math.log10(255 / 25), abs=0.1)

    def test_vertical_streak(self):
        streak = rasterize_streak(32, 32, 5.0, 3.0, 10, 90.0)
        assert np.count_nonzero(streak) == 11
        assert np.all(streak[3:14, 5])

    def test_streak_is_clipped_to_image(self):
        streak = rasterize_streak(8, 8, 4.0, 6.0, 10, 90.0)
        assert np.count_nonzero(streak) == 2

    def test_rain_only_brightens(self, rng):
        clean = np.zeros((3, 32, 32), dtype=np.float32)
        rainy = degrade_rain(clean, RainParams(), rng)
        assert np.all(rainy >= clean) and rainy.max() == pytest.approx(0.6)
        np.testing.assert_array_equal(rainy[0], rainy[2])

    def test_no_streaks_is_a_copy(self, rng):
        clean = rng.random((1, 8, 8), dtype=np.float32)
        np.testing.assert_array_equal(degrade_rain(clean, RainParams(count=0), rng), clean)

    def test_pairs_task_has_no_synthetic_degradation(self, rng):
        with pytest.raises(ConfigError):
            degrade_for_task(Task.PAIRS, np.zeros((3, 8, 8), dtype=np.float32), rng)

    def test_synth_corpus(self):
        a, b = synth_corpus(2, 20, 30, seed=4), synth_corpus(2, 20, 30, seed=4)
        assert a[0].shape == (3, 20, 30) and a[0].dtype == np.float32
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert a[0].min() >= 0 and a[0].max() <= 1
        assert synth_corpus(1, 8, 8, channels=1)[0].shape == (1, 8, 8)


# =============================================================================
# Metrics
# =============================================================================


def _ssim_oracle(a, b, size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    k = np.outer(g, g) / g.sum() ** 2
    c1, c2 = 0.01**2, 0.03**2
    scores = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            ma, mb = np.sum(k * pa), np.sum(k * pb)
            va, vb = np.sum(k * pa * pa) - ma**2, np.sum(k * pb * pb) - mb**2
            cov = np.sum(k * pa * pb) - ma * mb
            scores.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(scores))


class TestMetrics:
    def test_psnr_of_one_level_offset(self):
        a = np.zeros((3, 4, 4))
        assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), rel=1e-9)

    def test_psnr_bounds(self):
        a = np.zeros((4, 4))
        assert psnr(a, np.ones((4, 4))) == 0.0
        assert psnr(a, a) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mae(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_ssim_of_identical_images(self, rng):
        x = rng.random((3, 16, 16))
        assert ssim(x, x) == pytest.approx(1.0)

    def test_ssim_of_inverted_image_is_negative(self):
        a = np.zeros((32, 32))
        a[:, 16:] = 1.0
        assert ssim(a, 1.0 - a) < 0

    def test_ssim_is_symmetric(self, rng):
        a, b = rng.random((12, 14)), rng.random((12, 14))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_ssim_matches_sliding_window(self, rng):
        a = rng.random((13, 14))
        b = np.clip(a + 0.1 * rng.standard_normal((13, 14)), 0, 1)
        assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-6)

    def test_ssim_needs_a_full_window(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))

    def test_aggregate(self, rng):
        x = rng.random((1, 16, 16))
        records = [evaluate_pair("a", x * 0.9, x), evaluate_pair("b", x * 0.8, x)]
        mean = aggregate(records)
        assert mean.name == "mean"
        assert mean.mae == pytest.approx((records[0].mae + records[1].mae) / 2)
        assert set(mean.as_dict()) == {"name", "psnr", "ssim", "mae"}
        with pytest.raises(ValueError):
            aggregate([])


# =============================================================================
# PNG I/O
# =============================================================================


class TestImages:
    def test_rgb_round_trip(self, rng, tmp_path):
        pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        path = save_png(tmp_path / "nested" / "x.png", ImageBuffer.from_uint8(pixels))
        loaded = load_png(path)
        assert (loaded.channels, loaded.height, loaded.width) == (3, 5, 7)
        np.testing.assert_array_equal(loaded.to_uint8(), pixels)

    def test_grayscale_round_trip(self, rng, tmp_path):
        pixels = rng.integers(0, 256, size=(4, 6), dtype=np.uint8)
        loaded = load_png(save_png(tmp_path / "g.png", ImageBuffer.from_uint8(pixels)))
        assert loaded.channels == 1
        np.testing.assert_array_equal(loaded.to_uint8(), pixels)

    def test_float_values_are_clipped(self, tmp_path):
        data = np.array([[[-0.5, 0.5, 1.5]]], dtype=np.float32)
        loaded = load_png(save_png(tmp_path / "c.png", data))
        np.testing.assert_array_equal(loaded.to_uint8(), [[0, 128, 255]])

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            ImageBuffer(np.zeros((2, 4, 4), dtype=np.float32))

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_png(tmp_path / "absent.png")
        with pytest.raises(FileNotFoundError):
            list_pngs(tmp_path / "absent")

    @pytest.mark.parametrize("payload", [b"not an image", b"\x89PNG\r\n\x1a\n\x00\x00"])
    def test_undecodable_file(self, tmp_path, payload):
        path = tmp_path / "bad.png"
        path.write_bytes(payload)
        with pytest.raises(ImageError, match="bad.png"):
            load_png(path)

    def test_load_dir_is_sorted(self, tmp_path):
        for name in ("b.png", "a.png"):
            save_png(tmp_path / name, np.zeros((1, 2, 2), dtype=np.float32))
        (tmp_path / "notes.txt").write_text("skip")
        assert [name for name, _ in load_dir(tmp_path)] == ["a.png", "b.png"]

    def test_load_pairs(self, tmp_path):
        image = np.zeros((3, 4, 4), dtype=np.float32)
        save_png(tmp_path / "clean" / "0.png", image)
        save_png(tmp_path / "noisy" / "0.png", image + 0.5)
        [(name, clean, noisy)] = load_pairs(tmp_path / "clean", tmp_path / "noisy")
        assert name == "0.png" and noisy.data.mean() > clean.data.mean()

    def test_load_pairs_errors(self, tmp_path):
        save_png(tmp_path / "a" / "0.png", np.zeros((1, 4, 4), dtype=np.float32))
        save_png(tmp_path / "b" / "1.png", np.zeros((1, 4, 4), dtype=np.float32))
        with pytest.raises(ConfigError):
            load_pairs(tmp_path / "a", tmp_path / "b")
        save_png(tmp_path / "c" / "0.png", np.zeros((1, 4, 5), dtype=np.float32))
        with pytest.raises(ShapeError):
            load_pairs(tmp_path / "a", tmp_path / "c")
