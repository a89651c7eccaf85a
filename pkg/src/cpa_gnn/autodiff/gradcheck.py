"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_deviation: float
    tol: float
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation < self.tol)

    def to_dict(self) -> dict:
        return {"max_deviation": self.max_deviation, "tol": self.tol, "passed": self.passed}


def relative_deviation(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(
    f: Callable[..., Tensor],
    point: Tensor | Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare autodiff gradients of a scalar function with central differences.

    ``f`` is called as ``f(*points)`` and must rebuild its whole computation
    on every call (any randomness inside it must be re-seeded per call).
    The points are perturbed in place and restored afterwards, so functions
    that close over the same tensors (model parameters) work unchanged.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    if step <= 0:
        raise ValueError("step must be positive")

    saved = [(p.requires_grad, p.grad) for p in points]
    for p in points:
        p.requires_grad = True
        p.grad = None
    with Tape():
        out = f(*points)
        backward(out)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in points]

    numeric = []
    for p in points:
        original = p.data
        work = original.copy()
        p.data = work
        num = np.zeros(p.shape)
        flat_work, flat_num = work.reshape(-1), num.reshape(-1)
        for i in range(flat_work.size):
            x0 = flat_work[i]
            flat_work[i] = x0 + step
            up = f(*points).item()
            flat_work[i] = x0 - step
            down = f(*points).item()
            flat_work[i] = x0
            flat_num[i] = (up - down) / (2.0 * step)
        p.data = original
        numeric.append(num)

    for p, (rg, g) in zip(points, saved):
        p.requires_grad, p.grad = rg, g

    dev = max((relative_deviation(a, n, floor) for a, n in zip(analytic, numeric)), default=0.0)
    return GradCheckReport(dev, tol, analytic, numeric)
