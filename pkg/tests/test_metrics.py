import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidsr.metrics import (bicubic_upscale, crop_clip, metrics_record, psnr_frame_average, psnr_video, ssim,
                           ssim_video, temporal_profile, temporal_variation)
from vidsr.synthetic import panning_clips


class TestPSNR:
    def test_identical_is_inf(self, rng):
        clip = rng.random((3, 8, 8))
        assert psnr_video(clip, clip) == math.inf

    def test_zero_vs_one(self):
        assert psnr_video(np.zeros((2, 4, 4)), np.ones((2, 4, 4))) == pytest.approx(0.0)

    def test_pooled_not_averaged(self):
        ref = np.zeros((2, 4, 4))
        test = ref.copy()
        test[0] += 0.1                                   # frame A: MSE m = 0.01, frame B exact
        m = 0.01
        assert psnr_video(ref, test) == pytest.approx(10 * math.log10(1 / (m / 2)))
        assert psnr_frame_average(ref, test) == math.inf

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            psnr_video(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))

    def test_border_and_frame_crop(self, rng):
        ref = rng.random((5, 20, 20))
        test = ref.copy()
        test[0] = 0                                    # dropped by skip_frames
        test[:, :2] = 0                                # dropped by border crop
        assert psnr_video(ref, test, border_crop=2, skip_frames=1) == math.inf

    def test_peak_255(self):
        ref = np.zeros((1, 4, 4))
        assert psnr_video(ref * 255, ref * 255 + 1, peak=255.0) == pytest.approx(20 * math.log10(255))

    @given(a=st.floats(1e-4, 0.5), b=st.floats(1e-4, 0.5))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_mse(self, a, b):
        ref = np.zeros((1, 4, 4))
        pa, pb = psnr_video(ref, ref + a), psnr_video(ref, ref + b)
        assert (a < b) == (pa > pb) or a == b

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            crop_clip(np.zeros((3, 4, 4)), border=2)


class TestSSIM:
    def test_self_is_one(self, rng):
        img = rng.random((16, 16))
        assert ssim(img, img) == 1.0

    def test_symmetric(self, rng):
        a, b = rng.random((20, 20)), rng.random((20, 20))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)

    def test_negative_pattern(self):
        # two-level checker about mid-grey: equal means, perfectly anti-correlated
        lo, hi = 0.3, 0.7
        a = np.where((np.indices((22, 22)).sum(0) % 2) == 0, hi, lo)
        b = 1.0 - a
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        # locally the window is nearly balanced: mu ~ 0.5, var ~ 0.04, cov ~ -0.04
        value = ssim(a, b)
        assert value < 0
        closed = (2 * 0.25 + c1) / (0.5 + c1) * (-2 * 0.04 + c2) / (0.08 + c2)
        assert value == pytest.approx(closed, abs=0.02)

    def test_small_image_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_video_mean(self, rng):
        clip = rng.random((3, 16, 16))
        assert ssim_video(clip, clip) == 1.0


class TestBicubic:
    def test_r1_identity(self, rng):
        img = rng.random((5, 6))
        np.testing.assert_array_equal(bicubic_upscale(img, 1), img)

    def test_constant(self):
        np.testing.assert_allclose(bicubic_upscale(np.full((4, 5), 0.25), 3), 0.25, atol=1e-12)

    def test_linear_ramp_interior_exact(self):
        # Keys cubic with a = -0.5 reproduces linear functions away from the clamped edges
        img = np.tile(np.arange(10.0), (10, 1))
        up = bicubic_upscale(img, 2)
        xs = (np.arange(20) + 0.5) / 2 - 0.5
        np.testing.assert_allclose(up[5, 4:-4], xs[4:-4], atol=1e-12)

    def test_below_ground_truth(self):
        y, x = np.mgrid[0:48, 0:48]
        hr = 0.5 + 0.4 * np.sin(2 * np.pi * x / 9) * np.cos(2 * np.pi * y / 11)
        from vidsr.data import downscale
        up = bicubic_upscale(downscale(hr, 3), 3)
        assert psnr_video(hr, up) < psnr_video(hr, hr)
        assert psnr_video(hr, up) > 15


class TestProfiles:
    def test_static_rows_identical(self, still):
        prof = temporal_profile(still, 10)
        assert prof.shape == (len(still), 48)
        assert np.all(prof == prof[0])

    def test_pan_makes_diagonal(self):
        base = np.random.default_rng(0).random(40)
        frames = np.stack([np.tile(np.roll(base, t), (4, 1)) for t in range(6)])
        prof = temporal_profile(frames, 1)
        for t in range(1, 6):
            np.testing.assert_array_equal(prof[t, t:], prof[0, :40 - t])

    def test_row_out_of_range(self, still):
        with pytest.raises(ValueError, match="row"):
            temporal_profile(still, 48)

    def test_ground_truth_smoother_than_frame_independent_noise(self):
        clips, _ = panning_clips(1, (32, 32), 8, 1.0, seed=2)
        truth = clips[0].as_array()
        noisy = truth + 0.05 * np.random.default_rng(1).standard_normal(truth.shape)
        assert temporal_variation(temporal_profile(truth, 16)) < temporal_variation(temporal_profile(noisy, 16))


class TestRecord:
    def test_crop_changes_pixel_count(self, rng):
        clip = rng.random((4, 30, 30))
        a = metrics_record(clip, clip, border_crop=0)
        b = metrics_record(clip, clip, border_crop=4)
        assert a["pixels"] == 4 * 900 and b["pixels"] == 4 * 22 * 22
        assert a["psnr"] == math.inf and a["ssim"] == 1.0
