"""Sub-pixel spatio-temporal SR networks: single frame, early fusion, slow fusion
and slow fusion with weights shared in time (3D convolution)."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autograd import Tensor, activation, concat, conv_forward, no_grad, pixel_shuffle, reshape
from .optim import orthogonal_init

KINDS = ("SF", "early", "slow", "slow-shared")
BASE_FEATURES = 24
KERNEL = 3


@dataclass(frozen=True)
class LayerSpec:
    k: int
    d: int
    n: int
    stride: int = 1
    activation: str = "relu"
    shared_in_time: bool = True

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 1, got {self.k}")
        if self.d < 1 or self.n < 1 or self.stride < 1:
            raise ValueError(f"invalid layer {self}")


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    layers: tuple[LayerSpec, ...]
    d0: int
    r: int
    n_in: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.d0 < 1 or self.d0 % 2 == 0:
            raise ValueError(f"input depth D0 must be odd, got {self.d0}")
        if not self.layers:
            raise ValueError("network needs at least one layer")
        trace = self.depth_trace()
        if trace[-1] != 1:
            raise ValueError(f"temporal depths {trace} do not reduce to 1")
        last = self.layers[-1]
        if last.n != self.r * self.r or last.activation != "linear":
            raise ValueError(f"last layer must be linear with n = r^2 = {self.r ** 2}, got {last}")
        if self.kind == "early" and (self.layers[0].d != self.d0 or any(l.d != 1 for l in self.layers[1:])):
            raise ValueError(f"early fusion needs d0 = D0 = {self.d0} and d = 1 afterwards")
        if self.kind == "SF" and self.d0 != 1:
            raise ValueError("single-frame networks take D0 = 1")

    def depth_trace(self) -> list[int]:
        """Temporal depth after each layer, starting with D0."""
        depths = [self.d0]
        for i, layer in enumerate(self.layers):
            nxt = depths[-1] - layer.d + 1
            if nxt < 1:
                raise ValueError(f"layer {i} (d={layer.d}) exceeds remaining depth; trace so far {depths}")
            depths.append(nxt)
        return depths

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d0": self.d0, "r": self.r, "n_in": self.n_in,
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(kind=d["kind"], d0=d["d0"], r=d["r"], n_in=d.get("n_in", 1),
                   layers=tuple(LayerSpec(**l) for l in d["layers"]))

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def feature_allocation(depth: int, base: int = BASE_FEATURES) -> int:
    """Features for a layer whose output has temporal depth ``depth``."""
    if depth < 1 or base % depth:
        raise ValueError(f"temporal depth {depth} does not divide {base}")
    return base // depth


def default_schedule(kind: str, num_layers: int, d0: int) -> list[int]:
    if kind == "SF":
        return [1] * num_layers
    if kind == "early":
        return [d0] + [1] * (num_layers - 1)
    # slow fusion merges two slices per layer until the depth reaches 1
    merges = d0 - 1
    return [2] * merges + [1] * (num_layers - merges)


def build_network(kind: str, num_layers: int, d0: int = 1, r: int = 3,
                  schedule: Sequence[int] | None = None, base: int = BASE_FEATURES,
                  k: int = KERNEL) -> NetworkSpec:
    """Describe one of the four network families.

    Hidden layers are ReLU with ``base / D_l`` features; the last layer emits
    ``r^2`` linear channels for the sub-pixel shuffle.
    """
    if kind == "SF":
        d0 = 1
    schedule = list(schedule) if schedule is not None else default_schedule(kind, num_layers, d0)
    if len(schedule) != num_layers:
        raise ValueError(f"schedule has {len(schedule)} entries for {num_layers} layers")
    if num_layers < 1:
        raise ValueError("need at least one layer")
    layers = []
    depth = d0
    trace = [d0]
    for i, d in enumerate(schedule):
        depth = depth - d + 1
        trace.append(depth)
        if depth < 1:
            raise ValueError(f"inconsistent temporal schedule {schedule}: depth trace {trace}")
        last = i == num_layers - 1
        n = r * r if last else feature_allocation(depth, base)
        shared = kind != "slow" or depth == 1
        layers.append(LayerSpec(k=k, d=d, n=n, activation="linear" if last else "relu",
                                shared_in_time=shared))
    if depth != 1:
        raise ValueError(f"schedule {schedule} leaves temporal depth {depth}; trace {trace}")
    return NetworkSpec(kind=kind, layers=tuple(layers), d0=d0, r=r)


class SRNetwork:
    """Parameters plus forward pass for a :class:`NetworkSpec`.

    ``params[l]`` is a list of ``(weight, bias)`` pairs: one pair when the layer
    shares weights in time, else one pair per output temporal slice.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32, gain: float = math.sqrt(2.0)):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params: list[list[tuple[Tensor, Tensor]]] = []
        trace = spec.depth_trace()
        n_prev = spec.n_in
        counter = 0
        for l, layer in enumerate(spec.layers):
            groups = 1 if layer.shared_in_time else trace[l + 1]
            pairs = []
            for _ in range(groups):
                w = orthogonal_init((layer.d, n_prev, layer.n, layer.k, layer.k), gain,
                                    seed=[seed, counter], dtype=self.dtype)
                counter += 1
                pairs.append((Tensor(w, requires_grad=True), Tensor(np.zeros(layer.n, self.dtype), requires_grad=True)))
            self.params.append(pairs)
            n_prev = layer.n

    def parameters(self) -> list[Tensor]:
        return [t for pairs in self.params for pair in pairs for t in pair]

    def parameter_names(self) -> list[str]:
        names = []
        for l, pairs in enumerate(self.params):
            for g in range(len(pairs)):
                names += [f"layer{l}.group{g}.weight", f"layer{l}.group{g}.bias"]
        return names

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def layer(self, l: int, x: Tensor) -> Tensor:
        """Apply layer ``l`` (conv + activation) to ``x`` of shape ``(N, D, C, h, w)``."""
        spec = self.spec.layers[l]
        pairs = self.params[l]
        if len(pairs) == 1:
            y = conv_forward(x, pairs[0][0], pairs[0][1], spec.stride)
        else:
            y = concat([conv_forward(x[:, j:j + spec.d], w, b, spec.stride) for j, (w, b) in enumerate(pairs)],
                       axis=1)
        return activation(y, spec.activation)

    def features(self, x: Tensor) -> Tensor:
        for l in range(len(self.spec.layers)):
            x = self.layer(l, x)
        return x

    def upscale(self, feats: Tensor) -> Tensor:
        n, _, c, h, w = feats.shape
        return pixel_shuffle(reshape(feats, (n, c, h, w)), self.spec.r)

    def __call__(self, x) -> Tensor:
        """``(N, D0, 1, h, w)`` LR blocks to ``(N, 1, r*h, r*w)`` SR frames."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim == 4:
            x = reshape(x, (1,) + x.shape)
        if x.shape[1] != self.spec.d0:
            raise ValueError(f"block depth {x.shape[1]} != network D0 {self.spec.d0}")
        if x.shape[2] != self.spec.n_in:
            raise ValueError(f"block has {x.shape[2]} channels, network expects {self.spec.n_in}")
        return self.upscale(self.features(x))

    def copy_params_from(self, other: SRNetwork) -> None:
        for a, b in zip(self.parameters(), other.parameters()):
            a.data = b.data.astype(self.dtype, copy=True)

    def zero_(self) -> None:
        for p in self.parameters():
            p.data[...] = 0


def forward_sr(net: SRNetwork, block) -> Tensor:
    """Super-resolve the centre frame of a block (``FrameBlock`` or ``(D0, 1, h, w)`` array)."""
    lr = getattr(block, "lr_frames", block)
    lr = np.asarray(lr.data if isinstance(lr, Tensor) else lr)
    if lr.ndim != 4:
        raise ValueError(f"block must be (D0, 1, h, w), got {lr.shape}")
    if lr.shape[0] != net.spec.d0:
        raise ValueError(f"block depth {lr.shape[0]} != network D0 {net.spec.d0}")
    return net(Tensor(lr[None].astype(net.dtype)))


@dataclass
class ActivationCache:
    """Per-layer temporal slices keyed by the absolute index of their first input frame."""

    fingerprint: str
    frames: dict[int, np.ndarray] = field(default_factory=dict)
    slices: list[dict[int, np.ndarray]] = field(default_factory=list)
    next_index: int = 0
    computed: list[int] = field(default_factory=list)


def new_cache(net: SRNetwork) -> ActivationCache:
    return ActivationCache(fingerprint=net.spec.fingerprint(),
                           slices=[{} for _ in net.spec.layers])


def steady_state_forward(net: SRNetwork, new_frame: np.ndarray, cache: ActivationCache | None = None):
    """Push one LR frame; return ``(sr_frame or None, cache)``.

    Once ``D0`` frames are buffered, the centre of the newest window is
    super-resolved. Only temporal slices not already in the cache are
    computed; ``cache.computed`` records how many per layer.
    """
    spec = net.spec
    trace = spec.depth_trace()
    for l, layer in enumerate(spec.layers):
        if not layer.shared_in_time and trace[l + 1] > 1:
            raise ValueError(f"layer {l} does not share weights in time; activation reuse is impossible")
    if cache is None:
        cache = new_cache(net)
    if cache.fingerprint != spec.fingerprint():
        raise ValueError("activation cache belongs to a different network spec")

    frame = np.asarray(new_frame, dtype=net.dtype).reshape(1, 1, *np.shape(new_frame)[-2:])
    idx = cache.next_index
    cache.frames[idx] = frame
    cache.next_index += 1
    start = cache.next_index - spec.d0
    for key in [k for k in cache.frames if k < start]:
        del cache.frames[key]
    if start < 0:
        cache.computed = [0] * len(spec.layers)
        return None, cache

    prev = [cache.frames[start + j] for j in range(spec.d0)]   # each (1, 1, h, w)
    computed = []
    with no_grad():
        for l, layer in enumerate(spec.layers):
            store = cache.slices[l]
            out = []
            count = 0
            for j in range(trace[l + 1]):
                key = start + j
                if key not in store:
                    x = Tensor(np.stack(prev[j:j + layer.d], axis=1))   # (1, d, C, h, w)
                    w, b = net.params[l][0]
                    y = activation(conv_forward(x, w, b, layer.stride), layer.activation)
                    store[key] = y.data[:, 0]
                    count += 1
                out.append(store[key])
            for key in [k for k in store if k < start]:
                del store[key]
            computed.append(count)
            prev = out
    cache.computed = computed
    feats = Tensor(np.stack(prev, axis=1))
    return net.upscale(feats), cache


def stream_super_resolve(net: SRNetwork, frames: Sequence[np.ndarray]):
    """Frame-by-frame SR of a clip with replicate-clamped boundary blocks."""
    radius = (net.spec.d0 - 1) // 2
    padded = [frames[0]] * radius + list(frames) + [frames[-1]] * radius
    cache = new_cache(net)
    outputs, work = [], []
    for f in padded:
        sr, cache = steady_state_forward(net, f, cache)
        if sr is not None:
            outputs.append(sr.data[0, 0])
            work.append(list(cache.computed))
    return outputs, work
