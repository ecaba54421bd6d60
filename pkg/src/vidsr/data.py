"""Training data: luma extraction, LR synthesis, frame blocks and patch sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

log = logging.getLogger(__name__)

PATCH_SIZE = 33
SAMPLES_PER_CLIP = 30
VALIDATION_FRACTION = 0.05
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class VideoClip:
    """Ordered single-channel frames, each ``(H, W)`` in ``[0, 1]``."""

    frames: list[np.ndarray]
    frame_rate: float | None = None
    name: str = ""

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a clip needs at least one frame")
        self.frames = [np.asarray(f, dtype=np.float64).reshape(np.shape(f)[-2:]) for f in self.frames]
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ValueError(f"frame {i} has shape {f.shape}, clip frames are {shape}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def as_array(self) -> np.ndarray:
        return np.stack(self.frames)


@dataclass
class FrameBlock:
    lr_frames: np.ndarray   # (D0, 1, h, w)
    hr_center: np.ndarray   # (1, 1, r*h, r*w)
    t: int
    r: int

    def __post_init__(self):
        d0 = self.lr_frames.shape[0]
        if d0 % 2 == 0:
            raise ValueError(f"block depth must be odd, got {d0}")

    @property
    def depth(self) -> int:
        return self.lr_frames.shape[0]


@dataclass
class Patch:
    lr: np.ndarray          # (D0, 1, p, p)
    hr: np.ndarray          # (1, 1, r*p, r*p)
    clip: int = 0
    t: int = 0
    origin: tuple[int, int] = (0, 0)


@dataclass
class SampleSet:
    train: list[Patch] = field(default_factory=list)
    validation: list[Patch] = field(default_factory=list)
    samples: list[dict] = field(default_factory=list)   # one record per (clip, t) block
    d0: int = 1
    r: int = 3
    seed: int = 0
    patch_size: int = PATCH_SIZE


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """``(3, H, W)`` RGB in ``[0, 1]`` to ``(1, H, W)`` BT.601 luma."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) RGB, got shape {rgb.shape}")
    y = np.tensordot(np.array(LUMA_WEIGHTS), rgb, axes=1)
    return np.clip(y, 0.0, 1.0)[None]


@lru_cache(maxsize=None)
def gaussian_taps(sigma: float) -> np.ndarray:
    radius = math.ceil(2 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_taps(float(sigma))
    out = correlate1d(frame, k, axis=-1, mode="nearest")
    return correlate1d(out, k, axis=-2, mode="nearest")


def downscale(frame: np.ndarray, r: int, sigma: float | None = None) -> np.ndarray:
    """Gaussian low-pass (sigma ``r/2`` by default) then keep every ``r``-th pixel.

    Works on any array whose last two axes are ``H, W``; both must be
    divisible by ``r``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[-2:]
    if r < 1:
        raise ValueError(f"scale factor must be >= 1, got {r}")
    if h % r or w % r:
        raise ValueError(f"frame {h}x{w} not divisible by r={r}; crop first")
    if r == 1:
        return frame.copy()
    sigma = r / 2.0 if sigma is None else sigma
    return blur(frame, sigma)[..., ::r, ::r].copy()


def crop_to_multiple(frame: np.ndarray, m: int) -> np.ndarray:
    h, w = frame.shape[-2:]
    return frame[..., : h - h % m, : w - w % m]


def frame_block(clip: VideoClip, t: int, radius: int, r: int, sigma: float | None = None) -> FrameBlock:
    """Frames ``t-R .. t+R`` (indices clamped to the clip) downscaled by ``r``.

    The HR centre is cropped to a multiple of ``r`` and kept at full size.
    """
    if len(clip.frames) == 0:
        raise ValueError("empty clip")
    n = len(clip)
    if not 0 <= t < n:
        raise ValueError(f"frame index {t} outside clip of {n} frames")
    idx = block_indices(n, t, radius)
    lr = np.stack([downscale(crop_to_multiple(clip.frames[i], r), r, sigma) for i in idx])
    hr = crop_to_multiple(clip.frames[t], r)
    return FrameBlock(lr_frames=lr[:, None], hr_center=hr[None, None].copy(), t=t, r=r)


def block_indices(n_frames: int, t: int, radius: int) -> list[int]:
    return [min(max(t + i, 0), n_frames - 1) for i in range(-radius, radius + 1)]


def patch_origins(h: int, w: int, p: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Non-overlapping ``p x p`` tiles on a grid with a random sub-tile offset."""
    ny, nx = h // p, w // p
    if ny == 0 or nx == 0:
        return []
    oy = int(rng.integers(0, h - ny * p + 1))
    ox = int(rng.integers(0, w - nx * p + 1))
    return [(oy + i * p, ox + j * p) for i in range(ny) for j in range(nx)]


def extract_samples(clips: Sequence[VideoClip], d0: int, r: int, samples_per_clip: int = SAMPLES_PER_CLIP,
                    seed: int = 0, patch_size: int = PATCH_SIZE,
                    validation_fraction: float = VALIDATION_FRACTION,
                    sigma: float | None = None) -> SampleSet:
    """Draw random frame blocks per clip and cut them into aligned LR/HR patches.

    Patches cut from one block never overlap. The validation split is made
    per block, so patches from one block stay together.
    """
    if d0 % 2 == 0:
        raise ValueError(f"D0 must be odd, got {d0}")
    rng = np.random.default_rng(seed)
    radius = (d0 - 1) // 2
    records = []
    for ci, clip in enumerate(clips):
        h, w = clip.shape
        if h // r < patch_size or w // r < patch_size:
            log.warning("clip %d (%s) is %dx%d, smaller than one %dx%d LR patch at r=%d; skipped",
                        ci, clip.name, h, w, patch_size, patch_size, r)
            continue
        for _ in range(samples_per_clip):
            t = int(rng.integers(0, len(clip)))
            origins = patch_origins(h // r, w // r, patch_size, rng)
            records.append({"clip": ci, "t": t, "origins": origins})

    n_val = int(round(validation_fraction * len(records)))
    val_ids = set(rng.permutation(len(records))[:n_val].tolist()) if n_val else set()
    out = SampleSet(d0=d0, r=r, seed=seed, patch_size=patch_size)
    for k, rec in enumerate(records):
        rec["split"] = "validation" if k in val_ids else "train"
        block = frame_block(clips[rec["clip"]], rec["t"], radius, r, sigma)
        target = out.validation if k in val_ids else out.train
        target.extend(cut_patches(block, rec["origins"], patch_size, rec["clip"]))
        out.samples.append(rec)
    return out


def cut_patches(block: FrameBlock, origins, p: int, clip: int = 0) -> list[Patch]:
    r = block.r
    patches = []
    for oy, ox in origins:
        lr = block.lr_frames[:, :, oy:oy + p, ox:ox + p].copy()
        hr = block.hr_center[:, :, r * oy:r * (oy + p), r * ox:r * (ox + p)].copy()
        patches.append(Patch(lr=lr, hr=hr, clip=clip, t=block.t, origin=(oy, ox)))
    return patches


def batch_size(epoch: int, start: int = 1, every: int = 10, cap: int = 128) -> int:
    """Batch size doubling every ``every`` epochs, capped at ``cap``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return min(start * 2 ** (epoch // every), cap)
