"""Per-frame operation counts for conv networks (multiply-adds counted as two ops)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .motion import MCSpec
from .networks import NetworkSpec, build_network

HD = (1080, 1920)


def layer_ops(h: int, w: int, d_out: int, n_out: int, k: int, d: int, n_in: int) -> int:
    """``H W D_out n_out [(2 k^2 d - 1) n_in + 2]``; ``H, W`` are output extents."""
    for name, v in (("H", h), ("W", w), ("D_out", d_out), ("n_out", n_out), ("k", k), ("d", d), ("n_in", n_in)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    return h * w * d_out * n_out * ((2 * k * k * d - 1) * n_in + 2)


def gops(ops: int) -> float:
    return float(Decimal(ops) / Decimal(10 ** 9))


def round_gops(ops: int) -> float:
    return float((Decimal(ops) / Decimal(10 ** 9)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class LayerCost:
    name: str
    h: int
    w: int
    d_out: int
    n_out: int
    k: int
    d: int
    n_in: int
    ops: int


@dataclass
class CostReport:
    label: str
    layers: list[LayerCost] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(l.ops for l in self.layers)

    @property
    def gops(self) -> float:
        return round_gops(self.total)

    def to_dict(self) -> dict:
        return {"label": self.label, "total_ops": self.total, "gops": self.gops, "meta": self.meta,
                "layers": [asdict(l) for l in self.layers]}

    def __add__(self, other: CostReport) -> CostReport:
        return CostReport(f"{self.label}+{other.label}", self.layers + other.layers,
                          {"parts": [self.label, other.label]})


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _lr_extent(hr: tuple[int, int], r: int) -> tuple[int, int]:
    h, w = hr
    if h % r or w % r:
        raise ValueError(f"HR resolution {h}x{w} not divisible by r={r}")
    return h // r, w // r


def network_ops(spec: NetworkSpec, hr: tuple[int, int] = HD, r: int | None = None) -> CostReport:
    """Ops to reconstruct one frame, every temporal slice computed from scratch."""
    return _network_cost(spec, hr, r, steady=False)


def steady_state_ops(spec: NetworkSpec, hr: tuple[int, int] = HD, r: int | None = None) -> CostReport:
    """Ops per frame when shared-weight slices from the previous frame are reused:
    each shared layer computes only its newest temporal slice."""
    if not all(l.shared_in_time for l in spec.layers):
        raise ValueError("steady-state accounting needs weights shared in time; use network_ops")
    return _network_cost(spec, hr, r, steady=True)


def _network_cost(spec: NetworkSpec, hr, r, steady: bool) -> CostReport:
    r = spec.r if r is None else r
    if r != spec.r:
        raise ValueError(f"network upscales x{spec.r}, asked for x{r}")
    h, w = _lr_extent(hr, r)
    trace = spec.depth_trace()
    report = CostReport(f"{len(spec.layers)}L-{spec.kind}", meta={
        "hr": list(hr), "lr": [h, w], "r": r, "kind": spec.kind, "steady_state": steady})
    n_in = spec.n_in
    for l, layer in enumerate(spec.layers):
        h, w = _ceil_div(h, layer.stride), _ceil_div(w, layer.stride)
        d_out = 1 if steady else trace[l + 1]
        report.layers.append(LayerCost(f"conv{l}", h, w, d_out, layer.n, layer.k, layer.d, n_in,
                                       layer_ops(h, w, d_out, layer.n, layer.k, layer.d, n_in)))
        n_in = layer.n
    return report


def mc_ops(spec: MCSpec | None = None, hr: tuple[int, int] = HD, r: int = 3) -> CostReport:
    """One coarse + fine flow estimation in LR space (warps and shuffles are free)."""
    spec = spec or MCSpec()
    lr = _lr_extent(hr, r)
    report = CostReport(f"MC-x{r}", meta={"hr": list(hr), "lr": list(lr), "r": r})
    for name, layers, n_in in (("coarse", spec.coarse, spec.coarse_in), ("fine", spec.fine, spec.fine_in)):
        h, w = lr
        for i, layer in enumerate(layers):
            h, w = _ceil_div(h, layer.stride), _ceil_div(w, layer.stride)
            report.layers.append(LayerCost(f"{name}{i}", h, w, 1, layer.n, layer.k, 1, n_in,
                                           layer_ops(h, w, 1, layer.n, layer.k, 1, n_in)))
            n_in = layer.n
    return report


BASELINES = {
    # (kernels, features, works at HR)
    "srcnn": ((9, 5, 5), (64, 32, 1), True),
    "espcn": ((5, 3, 3), (64, 32, None), False),
}


def reference_baseline_ops(name: str, r: int = 3, hr: tuple[int, int] = HD) -> CostReport:
    """SRCNN (9-5-5, 64-32-1 at HR) or ESPCN (5-3-3, 64-32-r^2 at LR)."""
    key = name.lower()
    if key not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}; known: {sorted(BASELINES)}")
    kernels, feats, at_hr = BASELINES[key]
    h, w = hr if at_hr else _lr_extent(hr, r)
    report = CostReport(key.upper(), meta={"hr": list(hr), "r": r, "space": "HR" if at_hr else "LR"})
    n_in = 1
    for i, (k, n) in enumerate(zip(kernels, feats)):
        n = r * r if n is None else n
        report.layers.append(LayerCost(f"conv{i}", h, w, 1, n, k, 1, n_in, layer_ops(h, w, 1, n, k, 1, n_in)))
        n_in = n
    return report


def fusion_costs(hr: tuple[int, int] = HD, r: int = 3, layer_counts=(7, 9), d0: int = 5) -> dict[int, dict[str, CostReport]]:
    """SF / E5 / S5 / S5-SW costs for each depth."""
    out = {}
    for L in layer_counts:
        out[L] = {
            "SF": network_ops(build_network("SF", L, r=r), hr),
            f"E{d0}": network_ops(build_network("early", L, d0, r), hr),
            f"S{d0}": network_ops(build_network("slow", L, d0, r), hr),
            f"S{d0}-SW": steady_state_ops(build_network("slow-shared", L, d0, r), hr),
        }
    return out


def pipeline_costs(hr: tuple[int, int] = HD, scales=(3, 4)) -> dict[int, dict[str, CostReport]]:
    """Baselines, 5-layer E3 and 9-layer E3 with motion compensation (two flow estimates)."""
    out = {}
    for r in scales:
        mc = mc_ops(hr=hr, r=r)
        e9 = network_ops(build_network("early", 9, 3, r), hr)
        out[r] = {
            "SRCNN": reference_baseline_ops("srcnn", r, hr),
            "ESPCN": reference_baseline_ops("espcn", r, hr),
            "5L-E3": network_ops(build_network("early", 5, 3, r), hr),
            "MC": mc,
            "9L-E3-MC": CostReport("9L-E3-MC", e9.layers + mc.layers + mc.layers,
                                   {"parts": ["9L-E3", "MC", "MC"], "r": r}),
        }
    return out


def format_tables(hr: tuple[int, int] = HD) -> str:
    fus, pipes = fusion_costs(hr), pipeline_costs(hr)
    lines = [f"GOps per {hr[0]}x{hr[1]} frame", "", "x3 spatio-temporal networks (D0 = 5)"]
    names = list(next(iter(fus.values())))
    lines.append(f"{'# layers':>9} " + " ".join(f"{n:>8}" for n in names))
    for L, row in fus.items():
        lines.append(f"{L:>9} " + " ".join(f"{row[n].gops:>8.2f}" for n in names))
    lines += ["", "baselines and motion-compensated pipelines"]
    names = list(next(iter(pipes.values())))
    lines.append(f"{'scale':>9} " + " ".join(f"{n:>9}" for n in names))
    for r, row in pipes.items():
        lines.append(f"{'x' + str(r):>9} " + " ".join(f"{row[n].gops:>9.2f}" for n in names))
    return "\n".join(lines)


def tables_dict(hr: tuple[int, int] = HD) -> dict:
    return {
        "resolution": list(hr),
        "fusion": {str(L): {n: rep.to_dict() for n, rep in row.items()} for L, row in fusion_costs(hr).items()},
        "pipelines": {f"x{r}": {n: rep.to_dict() for n, rep in row.items()} for r, row in pipeline_costs(hr).items()},
    }
