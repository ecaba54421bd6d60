"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, backward


@dataclass
class GradCheckReport:
    passed: bool
    worst_rel_error: float
    tolerance: float
    per_input: list[float] = field(default_factory=list)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} worst relative error {self.worst_rel_error:.3e} (tol {self.tolerance:.0e})"


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise gap, relative to the largest gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def gradient_check(op: Callable[..., Tensor], inputs: Sequence[np.ndarray], tolerance: float = 1e-4,
                   step: float = 1e-5, seed: int = 0,
                   wrt: Sequence[int] | None = None) -> GradCheckReport:
    """Compare the analytic backward of ``op`` against central differences.

    ``op`` takes Tensors and returns a Tensor; non-scalar outputs are reduced
    with a fixed random projection so every output element contributes.
    Inputs must be float64.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    rng = np.random.default_rng(seed)
    projection: list[np.ndarray] = []

    def scalar(out: Tensor) -> Tensor:
        if out.data.size == 1:
            return out.reshape(())
        if not projection:
            projection.append(rng.standard_normal(out.shape))
        return (out * Tensor(projection[0])).sum()

    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    loss = scalar(op(*tensors))
    backward(loss)

    def value() -> float:
        return float(scalar(op(*[Tensor(a) for a in arrays])).data)

    errors = []
    for i in wrt:
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        numeric = numerical_gradient(value, arrays[i], step)
        errors.append(relative_error(analytic, numeric))
    worst = max(errors, default=0.0)
    return GradCheckReport(passed=bool(worst < tolerance), worst_rel_error=worst,
                           tolerance=tolerance, per_input=errors)
