import numpy as np
import pytest

from vidsr.autograd import Tensor, backward, bilinear_warp, huber_smoothness, no_grad
from vidsr.motion import (FlowField, MCNetwork, MCSpec, coarse_flow, compensate, compensate_block, fine_flow,
                          flow_to_pixels, mc_loss)

from vidsr.synthetic import smooth_texture, static_clip, translating_clip

import recipes
from conftest import smooth_image


def perturbed(seed=0, scale=0.05, dtype=np.float64):
    """An MC network whose zero-initialised heads have been nudged, so flows are nontrivial."""
    net = MCNetwork(seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed)
    for p in net.parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape).astype(dtype)
    return net


def trace(net, layers_attr, n_in):
    return [n_in] + [p[0].shape[2] for p in getattr(net, layers_attr)]


class TestArchitecture:
    def test_channel_traces(self):
        net = MCNetwork()
        assert trace(net, "coarse", 2) == [2, 24, 24, 24, 24, 32]
        assert trace(net, "fine", 5) == [5, 24, 24, 24, 24, 8]
        assert [l.stride for l in net.spec.coarse] == [2, 1, 2, 1, 1]
        assert [l.stride for l in net.spec.fine] == [2, 1, 1, 1, 1]
        assert net.spec.coarse[-1].activation == net.spec.fine[-1].activation == "tanh"

    def test_bad_head_rejected(self):
        spec = MCSpec()
        with pytest.raises(ValueError, match="head"):
            MCSpec(coarse=spec.coarse[:-1] + (type(spec.coarse[-1])(3, 16, 1, "tanh"),))

    def test_spec_round_trip(self):
        assert MCSpec.from_dict(MCSpec().to_dict()) == MCSpec()

    def test_heads_start_at_zero(self):
        net = MCNetwork(seed=4)
        assert not net.coarse[-1][0].data.any() and not net.fine[-1][0].data.any()


class TestFlows:
    def test_zero_init_gives_zero_flow(self, rng):
        a = rng.random((32, 32))
        c = coarse_flow(MCNetwork(), a, a)
        assert c.delta.shape == (1, 2, 32, 32)
        assert not c.delta.data.any()
        f = fine_flow(MCNetwork(), a, a, c, a)
        assert f.delta.shape == (1, 2, 32, 32) and not f.delta.data.any()

    @pytest.mark.parametrize("size", [(32, 32), (16, 40), (8, 8)])
    def test_resolution_closure(self, rng, size):
        net = perturbed()
        a, b = rng.random(size), rng.random(size)
        c = coarse_flow(net, a, b)
        warped, total = compensate(net, a, b)
        assert c.delta.shape[-2:] == size == total.delta.shape[-2:] == warped.shape[-2:]

    def test_size_not_divisible_by_four(self, rng):
        with pytest.raises(ValueError, match="divisible"):
            coarse_flow(MCNetwork(), rng.random((30, 32)), rng.random((30, 32)))

    def test_fine_size_mismatch(self, rng):
        net = MCNetwork()
        a = rng.random((16, 16))
        bad = FlowField(Tensor(np.zeros((1, 2, 8, 8))), "coarse")
        with pytest.raises(ValueError):
            fine_flow(net, a, a, bad, a)
        with pytest.raises(ValueError):
            fine_flow(net, a, rng.random((16, 8)), coarse_flow(net, a, a), a)

    def test_flow_range(self, rng):
        net = perturbed(scale=3.0)
        _, total = compensate(net, rng.random((16, 16)), rng.random((16, 16)))
        c = coarse_flow(net, rng.random((16, 16)), rng.random((16, 16)))
        assert np.abs(c.delta.data).max() <= 1.0
        assert np.abs(total.delta.data).max() <= 2.0       # coarse + fine

    def test_zero_parameter_net_is_identity(self, rng):
        net = MCNetwork()
        for p in net.parameters():
            p.data[...] = 0
        src = rng.random((16, 24))
        warped, total = compensate(net, rng.random((16, 24)), src)
        assert np.array_equal(warped.data[0, 0], src)
        assert not total.delta.data.any()

    def test_total_is_coarse_plus_fine(self, rng):
        net = perturbed(seed=2)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        c = coarse_flow(net, a, b)
        f = fine_flow(net, a, b, c, bilinear_warp(Tensor(b[None, None]), c.delta))
        warped, total = compensate(net, a, b)
        np.testing.assert_allclose(total.delta.data, c.delta.data + f.delta.data, atol=1e-12)
        np.testing.assert_allclose(warped.data, bilinear_warp(Tensor(b[None, None]), total.delta).data, atol=1e-12)

    def test_flow_to_pixels(self):
        delta = np.zeros((2, 5, 9))
        delta[0] = 0.5
        delta[1] = -1.0
        px = flow_to_pixels(delta)
        assert np.all(px[0] == 2.0) and np.all(px[1] == -2.0)


class TestBlock:
    def test_centre_preserved_and_two_flows(self, rng):
        net = perturbed(seed=1, dtype=np.float32)
        block = rng.random((2, 3, 1, 16, 16)).astype(np.float32)
        out = compensate_block(net, block)
        assert out.frames.shape == block.shape
        assert np.array_equal(out.frames.data[:, 1], block[:, 1])
        assert len(out.flows) == 2
        for i, flow in zip((0, 2), out.flows):
            warped, _ = compensate(net, block[:, 1], block[:, i])
            np.testing.assert_array_equal(out.frames.data[:, i], warped.data)

    @pytest.mark.parametrize("depth", [1, 5])
    def test_depth_must_be_three(self, rng, depth):
        with pytest.raises(ValueError, match="3-frame"):
            compensate_block(MCNetwork(), rng.random((1, depth, 1, 16, 16)))

    def test_single_block_without_batch_axis(self, rng):
        out = compensate_block(MCNetwork(), rng.random((3, 1, 8, 8)))
        assert out.frames.shape == (1, 3, 1, 8, 8)


class TestLoss:
    def test_constant_flow_example(self, rng):
        a = rng.random((8, 8))
        flow = np.zeros((1, 2, 8, 8))
        flow[:, 0] = 0.3
        assert float(mc_loss(a, a, flow, lam=0.01).data) == pytest.approx(0.001, rel=1e-12)

    def test_zero_lambda_is_mse(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        flow = rng.standard_normal((1, 2, 8, 8))
        assert float(mc_loss(a, b, flow, lam=0.0).data) == pytest.approx(np.mean((a - b) ** 2), rel=1e-12)

    def test_negative_lambda(self, rng):
        a = rng.random((8, 8))
        with pytest.raises(ValueError):
            mc_loss(a, a, np.zeros((1, 2, 8, 8)), lam=-0.1)

    def test_roughness_increases_penalty(self, rng):
        base = smooth_image(rng, (1, 2, 16, 16), sigma=3.0)
        prev = float(huber_smoothness(Tensor(base)).data)
        for amp in (0.01, 0.05, 0.2):
            cur = float(huber_smoothness(Tensor(base + amp * rng.standard_normal(base.shape))).data)
            assert cur > prev
            prev = cur

    def test_gradients_reach_both_groups(self, rng):
        net = perturbed(seed=5)
        a = smooth_image(rng, (16, 16))
        b = np.roll(a, 1, axis=1)
        warped, total = compensate(net, a, b)
        backward(mc_loss(a, warped, total, lam=0.01))
        n_coarse = 2 * len(net.coarse)
        grads = [p.grad for p in net.parameters()]
        assert all(g is not None and np.isfinite(g).all() for g in grads)
        assert all(np.abs(g).sum() > 0 for g in grads[:n_coarse])
        assert all(np.abs(g).sum() > 0 for g in grads[n_coarse:])


@pytest.mark.slow
class TestTrainedCompensation:
    """Uses the desk-scale translation pretraining shared with the acceptance suite."""

    def test_two_pixel_translation(self, trained_mc):
        rng = np.random.default_rng(21)
        clips = [translating_clip(smooth_texture(96, 96, rng), (64, 64), 3, (0.0, 2.0)) for _ in range(4)]
        errs = recipes.flow_errors(trained_mc.net, clips, [(0.0, 2.0)] * 4)
        assert errs["mean_error"] < 0.2

    def test_reduces_interframe_error(self, trained_mc):
        clips, velocities = recipes.translation_set(12, seed=31)
        errs = recipes.flow_errors(trained_mc.net, clips, velocities)
        assert errs["mse_after"] <= errs["mse_before"]

    @pytest.mark.xfail(strict=True, reason="trained flow on a static scene leaves ~1e-2 residual warps at "
                                           "edges; the 1e-3 bound is not reached at desk scale")
    def test_static_scene_is_preserved(self, trained_mc):
        clip = static_clip((64, 64), 3, seed=3)
        block = np.stack(clip.frames)[:, None].astype(np.float32)
        with no_grad():
            out = compensate_block(trained_mc.net, block).frames.data[0]
        assert np.abs(out - block).max() < 1e-3

