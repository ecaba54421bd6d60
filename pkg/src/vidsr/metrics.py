"""Video PSNR, SSIM, bicubic baseline and temporal profiles."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .data import VideoClip

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _frames(clip) -> np.ndarray:
    if isinstance(clip, VideoClip):
        return clip.as_array()
    arr = np.asarray(clip, dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def crop_clip(frames: np.ndarray, border: int = 0, skip_frames: int = 0) -> np.ndarray:
    """Drop ``border`` pixels on each side and ``skip_frames`` at each end."""
    t, h, w = frames.shape
    if 2 * skip_frames >= t:
        raise ValueError(f"cannot skip {skip_frames} frames at each end of a {t}-frame clip")
    if 2 * border >= min(h, w):
        raise ValueError(f"border {border} leaves nothing of a {h}x{w} frame")
    return frames[skip_frames:t - skip_frames, border:h - border, border:w - border]


def psnr_video(reference, test, border_crop: int = 0, skip_frames: int = 0, peak: float = 1.0) -> float:
    """PSNR with the squared error pooled over every pixel of every frame.

    Returns ``inf`` for identical clips.
    """
    ref, tst = _frames(reference), _frames(test)
    if ref.shape != tst.shape:
        raise ValueError(f"clip geometry mismatch: {ref.shape} vs {tst.shape}")
    ref = crop_clip(ref, border_crop, skip_frames)
    tst = crop_clip(tst, border_crop, skip_frames)
    mse = float(np.mean((ref - tst) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)


def psnr_frame_average(reference, test, peak: float = 1.0) -> float:
    """Mean of per-frame PSNRs; kept for contrast with :func:`psnr_video`."""
    ref, tst = _frames(reference), _frames(test)
    vals = [psnr_video(a, b, peak=peak) for a, b in zip(ref, tst)]
    return float(np.mean(vals))


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(reference: np.ndarray, test: np.ndarray, peak: float = 1.0, window: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03)."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    a, b = np.squeeze(a), np.squeeze(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"SSIM needs two single-channel images of equal size, got {a.shape} and {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    g = _gauss_window(window, sigma)
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim_video(reference, test, border_crop: int = 0, skip_frames: int = 0, peak: float = 1.0) -> float:
    ref = crop_clip(_frames(reference), border_crop, skip_frames)
    tst = crop_clip(_frames(test), border_crop, skip_frames)
    if ref.shape != tst.shape:
        raise ValueError(f"clip geometry mismatch: {ref.shape} vs {tst.shape}")
    return float(np.mean([ssim(a, b, peak) for a, b in zip(ref, tst)]))


def _cubic_weights(t: np.ndarray, a: float) -> np.ndarray:
    """Keys kernel weights for offsets -1, 0, 1, 2 around a fractional position ``t``."""
    def k(x):
        x = np.abs(x)
        return np.where(x <= 1, (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1,
                        np.where(x < 2, a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a, 0.0))
    return np.stack([k(t + 1), k(t), k(1 - t), k(2 - t)], axis=-1)


def _resize_axis(img: np.ndarray, r: int, axis: int, a: float) -> np.ndarray:
    n = img.shape[axis]
    pos = (np.arange(n * r) + 0.5) / r - 0.5
    base = np.floor(pos).astype(int)
    wts = _cubic_weights(pos - base, a)                      # (n*r, 4)
    idx = np.clip(base[:, None] + np.arange(-1, 3)[None], 0, n - 1)
    moved = np.moveaxis(img, axis, -1)
    out = (moved[..., idx] * wts).sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def bicubic_upscale(frame: np.ndarray, r: int, a: float = -0.5) -> np.ndarray:
    """Separable Keys bicubic interpolation by an integer factor, edges replicated."""
    img = np.asarray(frame, dtype=np.float64)
    if r == 1:
        return img.copy()
    return _resize_axis(_resize_axis(img, r, -2, a), r, -1, a)


def temporal_profile(clip, row: int) -> np.ndarray:
    """Stack row ``row`` of every frame: a ``(frames, width)`` image."""
    frames = _frames(clip)
    if not 0 <= row < frames.shape[1]:
        raise ValueError(f"row {row} outside frame height {frames.shape[1]}")
    return frames[:, row, :].copy()


def temporal_variation(profile: np.ndarray) -> float:
    """Mean absolute difference between consecutive profile rows."""
    return float(np.mean(np.abs(np.diff(profile, axis=0))))


def metrics_record(reference: Sequence, test: Sequence, border_crop: int = 0, skip_frames: int = 0,
                   peak: float = 1.0) -> dict:
    ref, tst = _frames(reference), _frames(test)
    if ref.shape != tst.shape:
        raise ValueError(f"clip geometry mismatch: {ref.shape} vs {tst.shape}")
    cropped = crop_clip(ref, border_crop, skip_frames)
    return {
        "psnr": psnr_video(ref, tst, border_crop, skip_frames, peak),
        "ssim": ssim_video(ref, tst, border_crop, skip_frames, peak),
        "frames": int(cropped.shape[0]),
        "pixels": int(cropped.size),
        "border_crop": border_crop,
        "skip_frames": skip_frames,
        "peak": peak,
    }
