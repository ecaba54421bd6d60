"""Small reverse-mode differentiation engine over numpy arrays.

Only the operations needed by the super-resolution and motion-compensation
networks are provided. Each one carries a hand-written backward pass.

Tensors used by convolutions are laid out ``(N, D, C, H, W)``: batch,
temporal depth, channels, height, width. Image-like tensors (frames, flows)
are ``(N, C, H, W)``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense array with an optional gradient and a link to its producer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> Tensor:
        return total(self)

    def mean(self) -> Tensor:
        return mean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Intermediate gradients live only for the duration of the call, so the
    same graph may be differentiated repeatedly; leaf gradients add up.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def power(a: Tensor, p: float) -> Tensor:
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def total(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),))


ACTIVATIONS = ("relu", "tanh", "linear")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# shape plumbing -----------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    def _back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g) if _has_advanced(index) else _slice_add(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), _back)


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _slice_add(out: np.ndarray, index, g: np.ndarray) -> None:
    out[index] += g


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits at the same boundaries."""
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat needs at least one tensor")
    ref = xs[0].shape
    ax = axis % len(ref)
    for i, x in enumerate(xs[1:], start=1):
        if x.ndim != len(ref):
            raise ValueError(f"input {i} has {x.ndim} axes, expected {len(ref)}")
        for a, (m, n) in enumerate(zip(ref, x.shape)):
            if a != ax and m != n:
                raise ValueError(f"input {i} mismatches on axis {a}: {n} != {m}")
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def _back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([x.data for x in xs], axis=ax), xs, _back)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Join ``(N, C, H, W)`` tensors along the channel axis, in argument order."""
    xs = [_as_tensor(x) for x in xs]
    h, w = xs[0].shape[-2:]
    for i, x in enumerate(xs):
        if x.shape[-2:] != (h, w):
            raise ValueError(f"input {i} spatial size {x.shape[-2:]} != {(h, w)}")
    return concat(xs, axis=-3)


# convolution -------------------------------------------------------------

def _pad_replicate(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, pad, mode="edge")


def _fold_replicate(g: np.ndarray, p: int, h: int, w: int) -> np.ndarray:
    """Adjoint of edge padding: pad-region gradients land on the border pixels."""
    if p == 0:
        return g
    rows = g[..., p:p + h, :].copy()
    rows[..., 0, :] += g[..., :p, :].sum(axis=-2)
    rows[..., -1, :] += g[..., p + h:, :].sum(axis=-2)
    out = rows[..., p:p + w].copy()
    out[..., 0] += rows[..., :p].sum(axis=-1)
    out[..., -1] += rows[..., p + w:].sum(axis=-1)
    return out


def _im2col(xp: np.ndarray, d: int, k: int, dout: int, ho: int, wo: int, stride: int) -> np.ndarray:
    """Columns laid out ``(N, D', d*k*k, C, H', W')``, offsets ordered ``(u, i, j)``."""
    n, _, c = xp.shape[:3]
    cols = np.empty((n, dout, d * k * k, c, ho, wo), dtype=xp.dtype)
    hs, ws = stride * ho, stride * wo
    q = 0
    for u in range(d):
        for i in range(k):
            for j in range(k):
                cols[:, :, q] = xp[:, u:u + dout, :, i:i + hs:stride, j:j + ws:stride]
                q += 1
    return cols


def conv_forward(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """Spatio-temporal convolution.

    ``x`` is ``(N, D, C, H, W)`` (or ``(D, C, H, W)``), ``weight`` is
    ``(d, C, O, k, k)`` and ``bias`` is ``(O,)``. Spatial padding replicates
    the edge so that stride 1 keeps ``H x W`` and stride ``s`` yields
    ``ceil(H / s)``; the temporal axis is unpadded, giving ``D - d + 1`` slices.
    """
    squeeze = x.ndim == 4
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 5:
        raise ValueError(f"conv input must have 4 or 5 axes, got shape {x.shape}")
    if weight.ndim != 5:
        raise ValueError(f"conv weight must be (d, C_in, C_out, k, k), got {weight.shape}")
    d, cin, cout, k, k2 = weight.shape
    n, depth, c, h, w = x.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {k}x{k2}")
    if c != cin:
        raise ValueError(f"channel axis mismatch: input has {c}, weight expects {cin}")
    if depth < d:
        raise ValueError(f"temporal axis too short: input depth {depth} < kernel depth {d}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    if stride < 1:
        raise ValueError("stride must be positive")

    p = k // 2
    xp = _pad_replicate(x.data, p)
    dout, ho, wo = depth - d + 1, -(-h // stride), -(-w // stride)
    q = d * k * k
    cols = _im2col(xp, d, k, dout, ho, wo, stride).reshape(n * dout, q * cin, ho * wo)
    # (O, q*C) with q ordered (u, i, j) to match the columns
    wmat = weight.data.transpose(2, 0, 3, 4, 1).reshape(cout, q * cin)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, dout, cout, ho, wo)

    def _back(g):
        g3 = np.ascontiguousarray(g).reshape(n * dout, cout, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gmat = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
            gw = gmat.reshape(cout, d, k, k, cin).transpose(1, 4, 0, 2, 3)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g3).reshape(n, dout, q, cin, ho, wo)
            gxp = np.zeros_like(xp)
            hs, ws = stride * ho, stride * wo
            qi = 0
            for u in range(d):
                for i in range(k):
                    for j in range(k):
                        gxp[:, u:u + dout, :, i:i + hs:stride, j:j + ws:stride] += gcols[:, :, qi]
                        qi += 1
            gx = _fold_replicate(gxp, p, h, w)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    result = _make(out, parents, _back)
    return reshape(result, result.shape[1:]) if squeeze else result


# sub-pixel rearrangement ------------------------------------------------------

def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, c, h, w = a.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    nl = len(lead)
    a = a.reshape(*lead, r, r, co, h, w)
    perm = list(range(nl)) + [nl + 2, nl + 3, nl, nl + 4, nl + 1]
    return a.transpose(perm).reshape(*lead, co, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, co, hr, wr = a.shape
    if hr % r or wr % r:
        raise ValueError(f"spatial size {(hr, wr)} not divisible by {r}")
    h, w = hr // r, wr // r
    nl = len(lead)
    a = a.reshape(*lead, co, h, r, w, r)
    perm = list(range(nl)) + [nl + 2, nl + 4, nl, nl + 1, nl + 3]
    return a.transpose(perm).reshape(*lead, r * r * co, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``(..., r*r*C, H, W) -> (..., C, rH, rW)``.

    Channel ``C * (r * dy + dx) + c`` becomes pixel ``(r*y + dy, r*x + dx)``
    of output channel ``c``.
    """
    return _make(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    return _make(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


# warping ------------------------------------------------------------------

def bilinear_warp(image: Tensor, flow: Tensor) -> Tensor:
    """Sample ``image`` at ``(x + dx, y + dy)`` with bilinear interpolation.

    ``image`` is ``(N, C, H, W)`` and ``flow`` is ``(N, 2, H, W)`` holding
    normalised displacements: a value of 1 moves ``(extent - 1) / 2`` pixels.
    Samples outside the frame take the nearest edge value.
    """
    if image.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        raise ValueError(f"expected image (N,C,H,W) and flow (N,2,H,W); got {image.shape}, {flow.shape}")
    n, c, h, w = image.shape
    if flow.shape[0] != n or flow.shape[2:] != (h, w):
        raise ValueError(f"flow shape {flow.shape} does not match image {image.shape}")

    sx, sy = (w - 1) / 2.0, (h - 1) / 2.0
    fd = flow.data
    gy, gx = np.meshgrid(np.arange(h, dtype=fd.dtype), np.arange(w, dtype=fd.dtype), indexing="ij")
    px = gx + fd[:, 0] * sx
    py = gy + fd[:, 1] * sy
    x0f, y0f = np.floor(px), np.floor(py)
    ax, ay = px - x0f, py - y0f
    x0 = np.clip(x0f, 0, w - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, w - 1).astype(np.intp)
    y0 = np.clip(y0f, 0, h - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, h - 1).astype(np.intp)

    flat = image.data.reshape(n, c, h * w)
    idx = [(y0 * w + x0), (y0 * w + x1), (y1 * w + x0), (y1 * w + x1)]
    idx = [i.reshape(n, 1, h * w) for i in idx]
    vals = [np.take_along_axis(flat, np.broadcast_to(i, (n, c, h * w)), axis=2).reshape(n, c, h, w)
            for i in idx]
    v00, v01, v10, v11 = vals
    wx, wy = ax[:, None], ay[:, None]
    weights = [(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx]
    out = weights[0] * v00 + weights[1] * v01 + weights[2] * v10 + weights[3] * v11

    def _back(g):
        gi = gf = None
        if image.requires_grad:
            base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
            acc = np.zeros(n * c * h * w, dtype=np.float64)
            for i, wt in zip(idx, weights):
                lin = (base + i).ravel()
                acc += np.bincount(lin, weights=(g * wt).reshape(n, c, h * w).ravel(),
                                   minlength=acc.size)
            gi = acc.reshape(image.shape).astype(image.dtype, copy=False)
        if flow.requires_grad:
            dpx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
            dpy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
            gf = np.stack([(g * dpx).sum(axis=1) * sx, (g * dpy).sum(axis=1) * sy], axis=1)
            gf = gf.astype(flow.dtype, copy=False)
        return gi, gf

    return _make(out, (image, flow), _back)


# losses ---------------------------------------------------------------------

def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over every element."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    scale = 2.0 / n
    return _make(np.asarray(np.mean(diff * diff)), (a, b),
                 lambda g: (g * scale * diff, -g * scale * diff))


def huber_smoothness(flow: Tensor, eps: float = 0.01) -> Tensor:
    """Charbonnier-style penalty on flow gradients, averaged over pixels.

    Per pixel ``sqrt(eps + sum_c (dx f_c)^2 + (dy f_c)^2)`` with forward
    differences; the last row and column have zero gradient.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if flow.ndim != 4 or flow.shape[-2] < 2 or flow.shape[-1] < 2:
        raise ValueError(f"flow must be (N, C, H, W) with H, W >= 2; got {flow.shape}")
    f = flow.data
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    gx[..., :, :-1] = f[..., :, 1:] - f[..., :, :-1]
    gy[..., :-1, :] = f[..., 1:, :] - f[..., :-1, :]
    s = np.sqrt(eps + (gx * gx + gy * gy).sum(axis=1))
    count = s.size

    def _back(g):
        ds = (g / count) / s
        dgx = gx * ds[:, None]
        dgy = gy * ds[:, None]
        df = np.zeros_like(f)
        df[..., :, 1:] += dgx[..., :, :-1]
        df[..., :, :-1] -= dgx[..., :, :-1]
        df[..., 1:, :] += dgy[..., :-1, :]
        df[..., :-1, :] -= dgy[..., :-1, :]
        return (df,)

    return _make(np.asarray(s.mean()), (flow,), _back)
