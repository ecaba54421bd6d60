"""Reading and writing frame sequences.

A clip is a directory of lossless images (PNG, TIFF, BMP, PGM; 8- or 16-bit;
grayscale or RGB) sorted by file name, or a directory of raw planar luma
files (``*.y`` / ``*.raw``) with a ``dims.txt`` sidecar holding
``width height [bits]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import VideoClip, to_luma

IMAGE_SUFFIXES = {".png", ".tif", ".tiff", ".bmp", ".pgm", ".ppm"}
RAW_SUFFIXES = {".y", ".raw"}


class FrameReadError(OSError):
    pass


def read_image(path: Path) -> np.ndarray:
    """Luma in ``[0, 1]`` as ``(H, W)`` float64."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.asarray(im)
    except Exception as exc:  # PIL raises a zoo of types
        raise FrameReadError(f"{path}: {exc}") from exc
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        scale = 65535.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    elif arr.dtype == np.uint8 or mode in ("L", "RGB", "RGBA", "P"):
        scale = 255.0
    else:
        raise FrameReadError(f"{path}: unsupported image mode {mode}")
    arr = arr.astype(np.float64) / scale
    if arr.ndim == 3:
        arr = to_luma(np.moveaxis(arr[..., :3], -1, 0))[0]
    return np.clip(arr, 0.0, 1.0)


def _read_dims(folder: Path) -> tuple[int, int, int]:
    dims = folder / "dims.txt"
    if not dims.exists():
        raise FrameReadError(f"{folder}: raw frames need a dims.txt sidecar ('width height [bits]')")
    parts = dims.read_text().split()
    if len(parts) not in (2, 3):
        raise FrameReadError(f"{dims}: expected 'width height [bits]'")
    w, h = int(parts[0]), int(parts[1])
    bits = int(parts[2]) if len(parts) == 3 else 8
    if bits not in (8, 16):
        raise FrameReadError(f"{dims}: bit depth must be 8 or 16")
    return w, h, bits


def read_raw(path: Path, w: int, h: int, bits: int) -> np.ndarray:
    dtype = np.uint8 if bits == 8 else np.dtype("<u2")
    data = np.fromfile(path, dtype=dtype)
    if data.size != w * h:
        raise FrameReadError(f"{path}: {data.size} samples, expected {w}x{h}")
    return data.reshape(h, w).astype(np.float64) / (255.0 if bits == 8 else 65535.0)


def list_frames(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"frame directory {folder} does not exist")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES | RAW_SUFFIXES)
    if not files:
        raise FrameReadError(f"{folder}: no frame files found")
    return files


def read_clip(folder: str | Path) -> VideoClip:
    folder = Path(folder)
    files = list_frames(folder)
    raw = [p for p in files if p.suffix.lower() in RAW_SUFFIXES]
    if raw:
        w, h, bits = _read_dims(folder)
        frames = [read_raw(p, w, h, bits) for p in raw]
    else:
        frames = [read_image(p) for p in files]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise FrameReadError(f"{folder}: frames have differing sizes {sorted(shapes)}")
    return VideoClip(frames, name=folder.name)


def write_frame(path: str | Path, frame: np.ndarray, bits: int = 8) -> None:
    frame = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(frame * 255).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        Image.fromarray(np.round(frame * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def write_clip(folder: str | Path, frames, bits: int = 8, prefix: str = "") -> list[Path]:
    """Write frames as ``{prefix}{index:05d}.png``."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = folder / f"{prefix}{i:05d}.png"
        write_frame(p, f, bits)
        paths.append(p)
    return paths


def write_flow(path: str | Path, flow: np.ndarray) -> None:
    """Pixel flow ``(2, H, W)`` (dx, dy) as a two-page 32-bit float TIFF."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, H, W), got {flow.shape}")
    pages = [Image.fromarray(np.ascontiguousarray(plane), mode="F") for plane in flow]
    pages[0].save(path, format="TIFF", save_all=True, append_images=pages[1:])


def read_flow(path: str | Path) -> np.ndarray:
    planes = []
    with Image.open(path) as im:
        for i in range(2):
            im.seek(i)
            planes.append(np.asarray(im, dtype=np.float32).copy())
    return np.stack(planes)
