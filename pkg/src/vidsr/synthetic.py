"""Synthetic clips for sanity experiments: band-limited textures with edges,
globally translating or static."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter, shift as nd_shift

from .data import VideoClip


def texture(h: int, w: int, rng: np.random.Generator, smooth: float = 2.0, shapes: int = 12) -> np.ndarray:
    """Smooth noise plus a few hard-edged rectangles and discs, scaled into ``[0.05, 0.95]``."""
    img = gaussian_filter(rng.standard_normal((h, w)), smooth, mode="wrap")
    img += 0.5 * gaussian_filter(rng.standard_normal((h, w)), 4 * smooth, mode="wrap")
    img = (img - img.mean()) / (img.std() + 1e-12) * 0.15
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(shapes):
        level = rng.uniform(-0.35, 0.35)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        size = rng.uniform(0.05, 0.2) * min(h, w)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < size) & (np.abs(xx - cx) < size * rng.uniform(0.4, 1.6))
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < size ** 2
        img[mask] += level
    img = 0.5 + img
    return np.clip(img, 0.05, 0.95)


def smooth_texture(h: int, w: int, rng: np.random.Generator, smooth: float = 3.0) -> np.ndarray:
    """Band-limited noise in ``[0, 1]``; gradients everywhere, no flat regions."""
    img = gaussian_filter(rng.standard_normal((h, w)), smooth, mode="wrap")
    img += 0.5 * gaussian_filter(rng.standard_normal((h, w)), 2 * smooth, mode="wrap")
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    return 0.1 + 0.8 * img


def translating_clip(canvas: np.ndarray, size: tuple[int, int], n_frames: int,
                     velocity: tuple[float, float], start: tuple[float, float] | None = None) -> VideoClip:
    """Crop a moving window from ``canvas``.

    ``velocity`` is ``(vy, vx)`` pixels per frame: content moves by ``-v``
    as the window moves by ``+v``. Fractional positions use cubic spline
    resampling of the canvas.
    """
    h, w = size
    vy, vx = velocity
    if start is None:
        start = ((canvas.shape[0] - h) / 2 - vy * (n_frames - 1) / 2,
                 (canvas.shape[1] - w) / 2 - vx * (n_frames - 1) / 2)
    frames = []
    for t in range(n_frames):
        y, x = start[0] + vy * t, start[1] + vx * t
        iy, ix = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - iy, x - ix
        if fy == 0 and fx == 0:
            frame = canvas[iy:iy + h, ix:ix + w]
        else:
            window = canvas[iy:iy + h + 4, ix:ix + w + 4]
            frame = nd_shift(window, (-fy, -fx), order=3, mode="nearest")[:h, :w]
        if frame.shape != (h, w):
            raise ValueError("canvas too small for the requested motion")
        frames.append(np.clip(frame, 0.0, 1.0).copy())
    return VideoClip(frames)


def panning_clips(n_clips: int, size: tuple[int, int], n_frames: int, max_speed: float, seed: int,
                  integer: bool = True, smooth: bool = False) -> tuple[list[VideoClip], list[tuple[float, float]]]:
    """Clips with a random global translation each; returns clips and their velocities.

    Velocities are drawn per axis and redrawn until their magnitude is at
    most ``max_speed`` pixels per frame.
    """
    rng = np.random.default_rng(seed)
    h, w = size
    margin = int(np.ceil(max_speed * n_frames)) + 8
    clips, velocities = [], []
    for _ in range(n_clips):
        canvas_h, canvas_w = h + 2 * margin, w + 2 * margin
        canvas = smooth_texture(canvas_h, canvas_w, rng) if smooth else texture(canvas_h, canvas_w, rng)
        while True:
            if integer:
                v = tuple(float(rng.integers(-int(max_speed), int(max_speed) + 1)) for _ in range(2))
            else:
                v = tuple(float(rng.uniform(-max_speed, max_speed)) for _ in range(2))
            if np.hypot(*v) <= max_speed:
                break
        clips.append(translating_clip(canvas, size, n_frames, v))
        velocities.append(v)
    return clips, velocities


def static_clip(size: tuple[int, int], n_frames: int, seed: int) -> VideoClip:
    rng = np.random.default_rng(seed)
    img = texture(*size, rng)
    return VideoClip([img.copy() for _ in range(n_frames)])
