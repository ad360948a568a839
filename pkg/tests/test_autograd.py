"""Tests for the tensor tape, the op library, MAC counting and gradient checking."""

import numpy as np
import pytest

from maeip.autograd import (
    Tensor,
    backward,
    counting_macs,
    grad_check,
    mac_scope,
    no_grad,
    ops,
    zero_grad,
)
from maeip.errors import ShapeError, TapeError
from maeip.autograd.tensor import make_result
from maeip.gradsuite import OP_CASES, check_model, run_gradient_suite
from maeip.train.losses import charbonnier


# =============================================================================
# Tensor and tape
# =============================================================================


class TestTensor:
    def test_integer_data_becomes_float32(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32

    def test_float64_is_kept(self):
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64

    def test_item_needs_single_value(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(3)).item()


class TestBackward:
    def test_shared_operand_accumulates(self):
        """d/dx (x*x + x) = 2x + 1."""
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        loss = ops.sum(ops.add(ops.mul(x, x), x))
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TapeError):
            backward(ops.square(x))

    def test_second_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = ops.sum(ops.square(x))
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)

    def test_detached_loss_rejected(self):
        with pytest.raises(TapeError):
            backward(Tensor(np.float32(1.0)))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.square(x)
        assert y.node is None and not y.requires_grad

    def test_zero_grad(self):
        x = Tensor(np.ones(2), requires_grad=True)
        backward(ops.sum(x))
        zero_grad([x])
        assert x.grad is None

    def test_debug_checks_catch_nan(self, monkeypatch):
        monkeypatch.setenv("MAEIP_DEBUG", "1")
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            ops.sqrt(Tensor(np.array([-1.0])))


# =============================================================================
# Ops
# =============================================================================


def _conv_oracle(x, w, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    cog = cout // groups
    for b in range(n):
        for o in range(cout):
            g = o // cog
            for y in range(ho):
                for xx in range(wo):
                    patch = xp[b, g * cpg : (g + 1) * cpg, y * stride : y * stride + kh, xx * stride : xx * stride + kw]
                    out[b, o, y, xx] = np.sum(patch * w[o])
    return out


class TestOps:
    @pytest.mark.parametrize(
        "stride,pad,groups,cin,cout,k",
        [
            (1, 1, 1, 3, 4, 3),
            (2, 1, 1, 2, 3, 3),
            (1, 1, 4, 4, 4, 3),
            (2, 1, 3, 3, 3, 3),
            (1, 1, 2, 4, 6, 3),
            (1, 0, 1, 3, 5, 1),
            (1, 1, 1, 2, 2, 1),
        ],
    )
    def test_conv2d_matches_loop(self, rng, stride, pad, groups, cin, cout, k):
        x = rng.standard_normal((2, cin, 6, 5))
        w = rng.standard_normal((cout, cin // groups, k, k))
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), stride=stride, pad=pad, groups=groups)
        np.testing.assert_allclose(out.data, _conv_oracle(x, w, stride, pad, groups), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2])
    def test_gate_mul_on_pooled_maps(self, rng, n):
        a = Tensor(rng.standard_normal((n, 4, 1, 1)), requires_grad=True)
        b = Tensor(rng.standard_normal((n, 4, 1, 1)), requires_grad=True)
        out = ops.gate_mul(a, b)
        np.testing.assert_array_equal(out.data, a.data * b.data)
        backward(ops.sum(out))
        np.testing.assert_array_equal(a.grad, b.data)
        np.testing.assert_array_equal(b.grad, a.data)

    def test_pixel_shuffle_round_trip_is_exact(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 8, 12)).astype(np.float32))
        down = ops.pixel_unshuffle(x, 2)
        assert down.shape == (2, 12, 4, 6)
        np.testing.assert_array_equal(ops.pixel_shuffle(down, 2).data, x.data)

    def test_masked_softmax_excludes_keys(self, rng):
        mask = np.array([[0.0, -np.inf, 0.0]])
        s = ops.masked_softmax(Tensor(rng.standard_normal((2, 3))), mask).data
        assert np.all(s[:, 1] == 0.0)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, rtol=1e-6)

    def test_masked_softmax_rejects_empty_row(self):
        with pytest.raises(ShapeError):
            ops.masked_softmax(Tensor(np.zeros((1, 2))), np.full((1, 2), -np.inf))

    def test_global_avg_pool_valid_region(self, rng):
        x = rng.standard_normal((1, 2, 4, 5)).astype(np.float32)
        valid = np.zeros((1, 1, 4, 5), dtype=np.float32)
        valid[..., :3, :2] = 1
        out = ops.global_avg_pool(Tensor(x), valid).data
        np.testing.assert_allclose(out[0, :, 0, 0], x[0, :, :3, :2].mean(axis=(1, 2)), rtol=1e-6)

    def test_broadcast_rules(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.zeros((3, 4))))

    def test_fit2d_pads_and_crops(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 3, 5)).astype(np.float32))
        y = ops.fit2d(x, 4, 4)
        assert y.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(y.data[..., :3, :4], x.data[..., :3, :4])
        assert np.all(y.data[..., 3, :] == 0)

    def test_charbonnier_zero_residual_is_eps(self):
        x = Tensor(np.full((1, 3, 4, 4), 0.3, dtype=np.float32), requires_grad=True)
        loss = charbonnier(x, Tensor(x.data.copy()))
        assert loss.data == np.float32(1e-3)
        backward(loss)
        assert np.all(x.grad == 0) and np.all(np.isfinite(x.grad))

    def test_charbonnier_unit_residual(self):
        loss = charbonnier(Tensor(np.ones((2, 2), dtype=np.float64)), Tensor(np.zeros((2, 2), dtype=np.float64)))
        assert loss.item() == pytest.approx(np.sqrt(1 + 1e-6), rel=1e-12)


# =============================================================================
# MAC counting
# =============================================================================


class TestMacCounting:
    def test_conv_and_matmul_tallies(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 6, 6)).astype(np.float32))
        w = Tensor(rng.standard_normal((8, 2, 3, 3)).astype(np.float32))
        with counting_macs() as counter:
            with mac_scope("conv"):
                ops.conv2d(x, w, pad=1, groups=2)
            with mac_scope("mm"):
                ops.matmul(Tensor(np.ones((3, 5, 7))), Tensor(np.ones((7, 2))))
        assert counter.totals == {"conv": 2 * 8 * 2 * 9 * 36, "mm": 3 * 5 * 7 * 2}

    def test_nothing_counted_outside_context(self, rng):
        with counting_macs() as counter:
            pass
        ops.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
        assert counter.total == 0


# =============================================================================
# Gradient checks
# =============================================================================


class TestGradCheck:
    @pytest.mark.parametrize("name", sorted(OP_CASES))
    def test_op_gradients(self, name):
        rng = np.random.default_rng(7)
        f, x = OP_CASES[name](rng)
        report = grad_check(f, x, eps=1e-6, rng=rng)
        assert report.passed, f"{name}: {report.max_rel_err:.2e} at {report.worst}"

    def test_detects_wrong_gradient(self):
        def bad_square(x):
            return make_result(x.data**2, (x,), lambda g: (g * x.data,), "bad")

        report = grad_check(bad_square, Tensor(np.array([1.0, 2.0]), dtype=np.float64))
        assert not report.passed

    def test_whole_model(self, nano):
        report = check_model(nano, seed=0, coords=8, names=6)
        assert report.passed, f"{report.max_rel_err:.2e} at {report.worst}"

    @pytest.mark.slow
    def test_full_suite(self):
        rows = run_gradient_suite("csformer-nano", inputs=5)
        assert all(r.passed for r in rows), [(r.name, r.max_rel_err) for r in rows if not r.passed]
