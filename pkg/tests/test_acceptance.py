"""Acceptance suite: one PASS/FAIL line per criterion (run with ``-s`` to see them).

Criteria 5 to 7 train small networks and take several minutes on one core;
they are marked ``slow``.
"""

import time

import numpy as np
import pytest

import recipes
from vidsr.autograd import (Tensor, activation, bilinear_warp, conv_forward, huber_smoothness, mse_loss,
                            pixel_shuffle, pixel_unshuffle)
from vidsr.cost import fusion_costs, pipeline_costs
from vidsr.gradcheck import gradient_check
from vidsr.metrics import psnr_frame_average, psnr_video, ssim
from vidsr.networks import LayerSpec, NetworkSpec, SRNetwork, build_network, forward_sr, stream_super_resolve
from vidsr.trainer import TrainConfig, Trainer

from conftest import smooth_image

FUSION_EXPECTED = {
    7: {"SF": 12.29, "E5": 12.69, "S5": 10.65, "S5-SW": 8.94},
    9: {"SF": 16.83, "E5": 17.22, "S5": 15.19, "S5-SW": 13.47},
}
# (value, tolerance) at x3 and x4
PIPELINE_EXPECTED = {
    "5L-E3": {3: (7.96, 0.01), 4: (4.85, 0.01)},
    "ESPCN": {3: (9.92, 0.01), 4: (6.08, 0.01)},
    "SRCNN": {3: (233.11, 0.05)},
    "MC": {3: (3.6, 0.15), 4: (2.0, 0.15)},
    "9L-E3-MC": {3: (24.23, 0.3)},
}
GRAD_INSTANCES = 20
GRAD_TOL = 1e-4


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


class TestOperationCounts:
    def test_fusion_costs(self):
        t0 = time.perf_counter()
        table = fusion_costs()
        seconds = time.perf_counter() - t0
        gaps = {(L, n): abs(table[L][n].gops - v) for L, row in FUSION_EXPECTED.items() for n, v in row.items()}
        worst = max(gaps.values())
        ok = worst <= 0.01 + 1e-9 and seconds < 1.0
        report(1, ok, f"fusion GOps, worst gap {worst:.3f} (tol 0.01), {seconds * 1e3:.1f} ms")
        assert ok, gaps

    def test_pipeline_costs(self):
        t0 = time.perf_counter()
        table = pipeline_costs()
        seconds = time.perf_counter() - t0
        failures = []
        for name, per_scale in PIPELINE_EXPECTED.items():
            for r, (value, tol) in per_scale.items():
                got = table[r][name].gops
                if abs(got - value) > tol + 1e-9:
                    failures.append(f"{name} x{r}: {got} vs {value} +- {tol}")
        ok = not failures and seconds < 1.0
        summary = ", ".join(f"{n} x3 {table[3][n].gops:.2f}" for n in PIPELINE_EXPECTED)
        report(2, ok, f"pipeline GOps ({summary}), {seconds * 1e3:.1f} ms")
        assert ok, failures


def _conv2d_case(rng):
    c_in, c_out = rng.integers(1, 4, size=2)
    x = rng.standard_normal((1, 1, c_in, 6, 6))
    w = rng.standard_normal((1, c_in, c_out, 3, 3))
    b = rng.standard_normal(c_out)
    stride = int(rng.integers(1, 3))
    return (lambda a, k, e: conv_forward(a, k, e, stride)), [x, w, b]


def _conv3d_case(rng):
    d = int(rng.integers(2, 4))
    depth = d + int(rng.integers(0, 2))
    c_in, c_out = rng.integers(1, 3, size=2)
    x = rng.standard_normal((1, depth, c_in, 5, 5))
    w = rng.standard_normal((d, c_in, c_out, 3, 3))
    b = rng.standard_normal(c_out)
    stride = int(rng.integers(1, 3))
    return (lambda a, k, e: conv_forward(a, k, e, stride)), [x, w, b]


def _activation_case(rng):
    kind = ("relu", "tanh")[int(rng.integers(0, 2))]
    x = rng.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 1e-3] += 0.01       # keep relu away from its kink
    return (lambda a: activation(a, kind)), [x]


def _shuffle_case(rng):
    r = int(rng.integers(2, 4))
    return (lambda a: pixel_shuffle(a, r)), [rng.standard_normal((1, r * r * 2, 3, 3))]


def _unshuffle_case(rng):
    r = int(rng.integers(2, 4))
    return (lambda a: pixel_unshuffle(a, r)), [rng.standard_normal((1, 2, 3 * r, 3 * r))]


def _warp_image_case(rng):
    img = smooth_image(rng, (1, 2, 7, 7))
    flow = 0.3 * rng.uniform(-1, 1, (1, 2, 7, 7))
    return bilinear_warp, [img, flow]


def _warp_flow_case(rng):
    img = smooth_image(rng, (1, 1, 7, 7))
    flow = 0.3 * rng.uniform(-1, 1, (1, 2, 7, 7))
    return (lambda f, a: bilinear_warp(a, f)), [flow, img]


def _mse_case(rng):
    return mse_loss, [rng.standard_normal((2, 1, 5, 5)), rng.standard_normal((2, 1, 5, 5))]


def _huber_case(rng):
    return huber_smoothness, [0.1 * rng.standard_normal((1, 2, 6, 6))]


GRAD_CASES = {
    "conv2d": (_conv2d_case, None),
    "conv3d": (_conv3d_case, None),
    "activations": (_activation_case, None),
    "pixel_shuffle": (_shuffle_case, None),
    "pixel_unshuffle": (_unshuffle_case, None),
    "warp_image": (_warp_image_case, [0]),
    "warp_flow": (_warp_flow_case, [0]),
    "mse": (_mse_case, None),
    "huber": (_huber_case, None),
}


class TestGradientChecks:
    _elapsed = {}

    @pytest.mark.parametrize("name", list(GRAD_CASES))
    def test_op(self, name):
        make, wrt = GRAD_CASES[name]
        rng = np.random.default_rng(list(GRAD_CASES).index(name))
        t0 = time.perf_counter()
        worst = 0.0
        for i in range(GRAD_INSTANCES):
            op, inputs = make(rng)
            rep = gradient_check(op, inputs, tolerance=GRAD_TOL, seed=i, wrt=wrt)
            worst = max(worst, rep.worst_rel_error)
        seconds = time.perf_counter() - t0
        self._elapsed[name] = seconds
        ok = worst < GRAD_TOL
        report(3, ok, f"{name}: {GRAD_INSTANCES} instances, worst relative error {worst:.2e}, {seconds:.1f} s")
        assert ok

    def test_total_runtime(self):
        total = sum(self._elapsed.values())
        ok = len(self._elapsed) == len(GRAD_CASES) and total < 120
        report(3, ok, f"all gradient checks in {total:.1f} s (limit 120 s)")
        assert ok


class TestStructuralInvariants:
    def test_invariants(self, rng):
        t0 = time.perf_counter()

        # pixel shuffle is a bijection on positions
        r, c, h, w = 3, 2, 4, 5
        ids = np.arange(r * r * c * h * w, dtype=np.float64).reshape(1, r * r * c, h, w)
        shuffled = pixel_shuffle(Tensor(ids), r).data
        bijection = (np.array_equal(np.sort(shuffled.ravel()), ids.ravel())
                     and np.array_equal(pixel_unshuffle(Tensor(shuffled), r).data, ids))

        # zero flow warps nothing
        img = rng.random((2, 3, 9, 11))
        identity = np.array_equal(bilinear_warp(Tensor(img), Tensor(np.zeros((2, 2, 9, 11)))).data, img)

        # steady-state streaming equals block forward on a 10-frame clip
        net = SRNetwork(build_network("slow-shared", 7, 5, 3, base=12), seed=2, dtype=np.float64)
        frames = [rng.random((12, 12)) for _ in range(10)]
        streamed, _ = stream_super_resolve(net, frames)
        padded = [frames[0]] * 2 + frames + [frames[-1]] * 2
        blocks = [forward_sr(net, np.stack(padded[t:t + 5])[:, None]).data[0, 0] for t in range(10)]
        stream_gap = max(float(np.abs(a - b).max()) for a, b in zip(streamed, blocks))

        # temporal depth bookkeeping: D0 - sum(d_l - 1) must be 1
        def spec(d0, ds):
            layers = [LayerSpec(3, d, 4) for d in ds[:-1]] + [LayerSpec(3, ds[-1], 9, activation="linear")]
            return NetworkSpec("slow", tuple(layers), d0, 3)

        rejected = 0
        for d0, ds in ((5, (2, 2, 1)), (5, (3, 3, 2)), (3, (1, 1, 1)), (7, (3, 3, 2))):
            try:
                spec(d0, ds)
            except ValueError:
                rejected += 1
        accepted = spec(5, (2, 2, 2, 2)).depth_trace()[-1] == 1
        depth_rule = rejected == 4 and accepted and all(
            build_network(k, L, d0, 3).d0 - sum(l.d - 1 for l in build_network(k, L, d0, 3).layers) == 1
            for k in ("early", "slow", "slow-shared") for L in (5, 7, 9) for d0 in (3, 5))

        seconds = time.perf_counter() - t0
        ok = bijection and identity and stream_gap < 1e-6 and depth_rule and seconds < 60
        report(4, ok, f"shuffle bijection {bijection}, zero-flow identity {identity}, "
                      f"streaming gap {stream_gap:.1e}, depth rule {depth_rule}, {seconds:.1f} s")
        assert ok


@pytest.mark.slow
class TestMotionPretraining:
    def test_translation_recovery(self, trained_mc):
        clips, velocities = recipes.translation_set(20, seed=99)
        errs = recipes.flow_errors(trained_mc.net, clips, velocities)
        reduction = errs["mse_before"] / errs["mse_after"]
        hist = trained_mc.trainer.history
        loss_drop = hist[0]["train_photometric"] / hist[-1]["train_photometric"]
        ok = errs["mean_error"] < 0.2 and reduction >= 10 and trained_mc.seconds < 1800
        report(5, ok, f"interior flow error {errs['mean_error']:.3f} px (per-pixel {errs['pixel_error']:.3f}), "
                      f"held-out photometric reduction {reduction:.1f}x (train loss {loss_drop:.1f}x), "
                      f"{trained_mc.seconds:.0f} s")
        assert ok


@pytest.mark.slow
class TestSpatioTemporalTraining:
    def test_e3_beats_bicubic(self, trained_e3):
        held = recipes.held_out_psnr(trained_e3.net, recipes.texture_clips(20, seed=2))
        mse = [h["train_sr"] for h in trained_e3.trainer.history]
        windows = [float(np.mean(mse[i:i + 10])) for i in range(0, len(mse) - 9, 10)]
        monotone = len(windows) >= 2 and all(a > b for a, b in zip(windows, windows[1:]))
        gain = held.psnr_net - held.psnr_bicubic
        ok = gain >= 1.0 and monotone and trained_e3.seconds < 3600
        report(6, ok, f"E3 {held.psnr_net:.2f} dB vs bicubic {held.psnr_bicubic:.2f} dB (+{gain:.2f}), "
                      f"10-epoch MSE windows {['%.2e' % v for v in windows]}, {trained_e3.seconds:.0f} s")
        assert ok

    def test_joint_motion_compensation(self, joint_runs):
        clips = recipes.texture_clips(20, seed=2)
        with_mc = recipes.held_out_psnr(joint_runs.joint_sr, clips, joint_runs.joint_mc).psnr_net
        without = recipes.held_out_psnr(joint_runs.plain_sr, clips).psnr_net
        ok = with_mc >= without and joint_runs.seconds < 7200
        report(7, ok, f"E3-MC {with_mc:.2f} dB vs E3 {without:.2f} dB with equal budget, "
                      f"{joint_runs.seconds:.0f} s")
        assert ok


class TestReproducibility:
    def _joint(self, samples, split=None, tmp_path=None):
        from vidsr.motion import MCNetwork
        sr = SRNetwork(build_network("early", 3, 3, 3, base=12), seed=1)
        mc = MCNetwork(seed=1)
        cfg = TrainConfig(regime="joint", epochs=3, seed=5, lr=1e-3, batch_every=1, batch_cap=4)
        trainer = Trainer(cfg, samples.train, samples.validation, sr_net=sr, mc_net=mc)
        if split is not None:
            trainer.run(max_steps=split)
            trainer = Trainer.resume(trainer.save(tmp_path / "cut.ckpt"), samples.train, samples.validation)
        trainer.run()
        return trainer

    def test_bitwise(self, tmp_path):
        from vidsr.data import extract_samples
        from vidsr.synthetic import panning_clips
        t0 = time.perf_counter()
        clips, _ = panning_clips(3, (48, 48), 4, 2.0, seed=4)
        samples = extract_samples(clips, 3, 3, samples_per_clip=3, seed=0, patch_size=8, validation_fraction=0.2)
        a, b = self._joint(samples), self._joint(samples)
        resumed = [self._joint(samples, split, tmp_path) for split in (1, 9)]

        def same(x, y):
            return (x.history == y.history and x.adam.step == y.adam.step
                    and all(np.array_equal(p.data, q.data) for p, q in zip(x.parameters(), y.parameters())))

        repeat = same(a, b)
        resume = all(same(a, r) for r in resumed)
        seconds = time.perf_counter() - t0
        ok = repeat and resume and seconds < 300
        report(8, ok, f"fixed-seed rerun identical {repeat}, save/resume identical {resume}, {seconds:.1f} s")
        assert ok


class TestMetrics:
    def test_pooling_and_ssim(self, rng):
        t0 = time.perf_counter()
        ref = np.zeros((2, 16, 16))
        test = ref.copy()
        test[0] += 0.1                     # frame MSEs 0.01 and 0.0001
        test[1] += 0.01
        pooled = psnr_video(ref, test)
        averaged = psnr_frame_average(ref, test)
        pooled_expected = 10 * np.log10(1 / ((0.01 + 0.0001) / 2))
        averaged_expected = (20.0 + 40.0) / 2
        pooling = (abs(pooled - pooled_expected) < 1e-9 and abs(averaged - averaged_expected) < 1e-9
                   and abs(pooled - averaged) > 1.0)

        x, y = rng.random((32, 32)), rng.random((32, 32))
        self_ssim = ssim(x, x)
        symmetric = abs(ssim(x, y) - ssim(y, x)) < 1e-12
        seconds = time.perf_counter() - t0
        ok = pooling and abs(self_ssim - 1.0) < 1e-12 and symmetric and seconds < 60
        report(9, ok, f"pooled {pooled:.3f} dB vs frame-averaged {averaged:.3f} dB, "
                      f"SSIM(x,x) = {self_ssim:.12f}, symmetric {symmetric}")
        assert ok
