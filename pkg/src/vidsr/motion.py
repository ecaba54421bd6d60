"""Spatial-transformer motion compensation: coarse x4 flow, fine x2 refinement,
bilinear warping and the photometric + smoothness objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .autograd import (Tensor, activation, add, bilinear_warp, concat, concat_channels, conv_forward,
                       huber_smoothness, mse_loss, mul, pixel_shuffle, reshape)
from .optim import orthogonal_init

HUBER_EPS = 0.01


@dataclass(frozen=True)
class FlowLayer:
    k: int
    n: int
    stride: int
    activation: str = "relu"


COARSE_LAYERS = (
    FlowLayer(5, 24, 2), FlowLayer(3, 24, 1), FlowLayer(5, 24, 2), FlowLayer(3, 24, 1),
    FlowLayer(3, 32, 1, "tanh"),
)
FINE_LAYERS = (
    FlowLayer(5, 24, 2), FlowLayer(3, 24, 1), FlowLayer(3, 24, 1), FlowLayer(3, 24, 1),
    FlowLayer(3, 8, 1, "tanh"),
)


@dataclass(frozen=True)
class MCSpec:
    coarse: tuple[FlowLayer, ...] = COARSE_LAYERS
    fine: tuple[FlowLayer, ...] = FINE_LAYERS
    coarse_in: int = 2
    fine_in: int = 5
    coarse_scale: int = 4
    fine_scale: int = 2

    def __post_init__(self):
        for name, layers, scale in (("coarse", self.coarse, self.coarse_scale), ("fine", self.fine, self.fine_scale)):
            if layers[-1].n != 2 * scale * scale:
                raise ValueError(f"{name} head must emit 2 * {scale}^2 channels, got {layers[-1].n}")
            stride = math.prod(l.stride for l in layers)
            if stride != scale:
                raise ValueError(f"{name} strides reduce by {stride}, upscale is x{scale}")

    def to_dict(self) -> dict:
        return {"coarse": [asdict(l) for l in self.coarse], "fine": [asdict(l) for l in self.fine],
                "coarse_in": self.coarse_in, "fine_in": self.fine_in,
                "coarse_scale": self.coarse_scale, "fine_scale": self.fine_scale}

    @classmethod
    def from_dict(cls, d: dict) -> MCSpec:
        return cls(coarse=tuple(FlowLayer(**l) for l in d["coarse"]), fine=tuple(FlowLayer(**l) for l in d["fine"]),
                   coarse_in=d["coarse_in"], fine_in=d["fine_in"],
                   coarse_scale=d["coarse_scale"], fine_scale=d["fine_scale"])


class FlowField(NamedTuple):
    """``delta`` is ``(N, 2, H, W)``: normalised (dx, dy)."""

    delta: Tensor
    resolution: str = "total"


class CompensatedBlock(NamedTuple):
    frames: Tensor              # (N, 3, 1, h, w), outer frames warped toward the centre
    flows: tuple[FlowField, FlowField]


class MCNetwork:
    """Coarse and fine flow estimators. Final layers start at zero (identity warp)."""

    def __init__(self, spec: MCSpec | None = None, seed: int = 0, dtype=np.float32, gain: float = math.sqrt(2.0)):
        self.spec = spec or MCSpec()
        self.dtype = np.dtype(dtype)
        self.coarse = self._init(self.spec.coarse, self.spec.coarse_in, seed, 0, gain)
        self.fine = self._init(self.spec.fine, self.spec.fine_in, seed, 100, gain)

    def _init(self, layers, n_in, seed, offset, gain):
        params = []
        for i, layer in enumerate(layers):
            shape = (1, n_in, layer.n, layer.k, layer.k)
            if i == len(layers) - 1:
                w = np.zeros(shape, self.dtype)
            else:
                w = orthogonal_init(shape, gain, seed=[seed, offset + i], dtype=self.dtype)
            params.append((Tensor(w, requires_grad=True), Tensor(np.zeros(layer.n, self.dtype), requires_grad=True)))
            n_in = layer.n
        return params

    def parameters(self) -> list[Tensor]:
        return [t for group in (self.coarse, self.fine) for pair in group for t in pair]

    def parameter_names(self) -> list[str]:
        names = []
        for group, params in (("coarse", self.coarse), ("fine", self.fine)):
            for i in range(len(params)):
                names += [f"{group}{i}.weight", f"{group}{i}.bias"]
        return names

    def copy_params_from(self, other: MCNetwork) -> None:
        for a, b in zip(self.parameters(), other.parameters()):
            a.data = b.data.astype(self.dtype, copy=True)

    def run(self, layers, params, x: Tensor, scale: int) -> Tensor:
        n, c, h, w = x.shape
        y = reshape(x, (n, 1, c, h, w))
        for layer, (wt, b) in zip(layers, params):
            y = activation(conv_forward(y, wt, b, layer.stride), layer.activation)
        _, _, c, hh, ww = y.shape
        return pixel_shuffle(reshape(y, (n, c, hh, ww)), scale)


def _frames(*xs):
    out = []
    for x in xs:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        if x.ndim == 2:
            x = reshape(x, (1, 1) + x.shape)
        elif x.ndim == 3:
            x = reshape(x, (1,) + x.shape)
        out.append(x)
    ref = out[0].shape
    for i, x in enumerate(out):
        if x.shape != ref:
            raise ValueError(f"frame {i} shape {x.shape} != {ref}")
    return out


def coarse_flow(net: MCNetwork, frame_t, frame_tk) -> FlowField:
    frame_t, frame_tk = _frames(frame_t, frame_tk)
    h, w = frame_t.shape[-2:]
    s = net.spec.coarse_scale
    if h % s or w % s:
        raise ValueError(f"frame {h}x{w} not divisible by {s}; pad or crop to a multiple of {s}")
    delta = net.run(net.spec.coarse, net.coarse, concat_channels([frame_t, frame_tk]), s)
    return FlowField(delta, "coarse")


def fine_flow(net: MCNetwork, frame_t, frame_tk, coarse: FlowField, warped_coarse) -> FlowField:
    frame_t, frame_tk, warped_coarse = _frames(frame_t, frame_tk, warped_coarse)
    h, w = frame_t.shape[-2:]
    s = net.spec.fine_scale
    if h % s or w % s:
        raise ValueError(f"frame {h}x{w} not divisible by {s}")
    if coarse.delta.shape[-2:] != (h, w):
        raise ValueError(f"coarse flow size {coarse.delta.shape[-2:]} != frame size {(h, w)}")
    x = concat_channels([frame_t, frame_tk, coarse.delta, warped_coarse])
    return FlowField(net.run(net.spec.fine, net.fine, x, s), "fine")


def compensate(net: MCNetwork, frame_t, frame_tk) -> tuple[Tensor, FlowField]:
    """Warp ``frame_tk`` toward ``frame_t``; returns ``(warped, total flow)``."""
    frame_t, frame_tk = _frames(frame_t, frame_tk)
    c = coarse_flow(net, frame_t, frame_tk)
    warped_c = bilinear_warp(frame_tk, c.delta)
    f = fine_flow(net, frame_t, frame_tk, c, warped_c)
    total = add(c.delta, f.delta)
    return bilinear_warp(frame_tk, total), FlowField(total, "total")


def compensate_block(net: MCNetwork, block) -> CompensatedBlock:
    """Warp both outer frames of ``(N, 3, 1, h, w)`` blocks onto the centre frame."""
    x = block if isinstance(block, Tensor) else Tensor(np.asarray(getattr(block, "lr_frames", block)))
    if x.ndim == 4:
        x = reshape(x, (1,) + x.shape)
    if x.shape[1] != 3:
        raise ValueError(f"motion compensation works on 3-frame blocks, got depth {x.shape[1]}")
    n, _, c, h, w = x.shape
    prev, centre, nxt = (reshape(x[:, i], (n, c, h, w)) for i in range(3))
    warped_prev, flow_prev = compensate(net, centre, prev)
    warped_next, flow_next = compensate(net, centre, nxt)
    frames = concat([reshape(v, (n, 1, c, h, w)) for v in (warped_prev, centre, warped_next)], axis=1)
    return CompensatedBlock(frames, (flow_prev, flow_next))


def mc_loss(frame_t, warped, total_flow, lam: float, eps: float = HUBER_EPS) -> Tensor:
    """Photometric MSE plus ``lam`` times the flow smoothness penalty."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    frame_t, warped = _frames(frame_t, warped)
    delta = total_flow.delta if isinstance(total_flow, FlowField) else total_flow
    delta = delta if isinstance(delta, Tensor) else Tensor(np.asarray(delta))
    loss = mse_loss(frame_t, warped)
    if lam == 0:
        return loss
    return add(loss, mul(huber_smoothness(delta, eps), lam))


def flow_to_pixels(delta: np.ndarray) -> np.ndarray:
    """Normalised ``(..., 2, H, W)`` flow to pixel displacements."""
    h, w = delta.shape[-2:]
    out = np.array(delta, dtype=np.float64)
    out[..., 0, :, :] *= (w - 1) / 2.0
    out[..., 1, :, :] *= (h - 1) / 2.0
    return out
