"""Adam and orthogonal initialisation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> AdamState:
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    A missing gradient is treated as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(params) != len(state.m):
        raise ValueError(f"optimizer holds {len(state.m)} slots, got {len(params)} parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def orthogonal_init(shape: Sequence[int], gain: float = math.sqrt(2.0), seed=0,
                    dtype=np.float64) -> np.ndarray:
    """Orthogonal filter initialisation.

    ``shape`` is a conv weight ``(d, C_in, C_out, k, k)`` (flattened to
    ``C_out x d*C_in*k*k``) or a plain 2-D ``(rows, cols)`` matrix. The
    rows or columns, whichever are fewer, come out orthonormal, then scaled
    by ``gain``.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"cannot initialise zero-sized shape {shape}")
    if len(shape) == 5:
        d, cin, cout, k, k2 = shape
        rows, cols = cout, d * cin * k * k2
    elif len(shape) == 2:
        rows, cols = shape
    else:
        rows, cols = shape[0], int(np.prod(shape[1:]))

    rng = np.random.default_rng(seed)
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    q = gain * q
    if len(shape) == 5:
        q = q.reshape(cout, d, cin, k, k2).transpose(1, 2, 0, 3, 4)
    return np.ascontiguousarray(q.reshape(shape)).astype(dtype)
