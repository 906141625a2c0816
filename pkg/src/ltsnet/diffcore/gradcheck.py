"""Finite-difference oracle for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor


class GradientStructureError(RuntimeError):
    """The tape never reached an input that was expected to receive a gradient."""


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_coordinate: tuple[int, ...]
    passed: bool
    tape: np.ndarray
    numeric: np.ndarray


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        value = value.data
    arr = np.asarray(value, dtype=np.float64)
    if arr.size != 1:
        raise ValueError(f"function must return a scalar, got shape {arr.shape}")
    return float(arr.reshape(()))


def finite_difference_gradient(f: Callable[[Tensor], object], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x``.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` (e.g. a model parameter) rather than consume its argument.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = _scalar(f(x))
    if not np.isfinite(base):
        raise FloatingPointError("f(x) is not finite at the base point")
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = _scalar(f(x))
        flat[i] = orig - eps
        lo = _scalar(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            coord = np.unravel_index(i, x.shape)
            raise FloatingPointError(f"non-finite f evaluation at coordinate {tuple(int(c) for c in coord)}")
        out[i] = (hi - lo) / (2.0 * eps)
    return grad


def tape_gradient(f: Callable[[Tensor], object], x: Tensor) -> np.ndarray:
    x.grad = None
    was = x.requires_grad
    x.requires_grad = True
    try:
        out = f(x)
        if not isinstance(out, Tensor):
            raise GradientStructureError("f did not return a Tensor")
        out.backward()
    finally:
        x.requires_grad = was
    if x.grad is None:
        raise GradientStructureError("tape produced no gradient for the checked input")
    g = x.grad
    x.grad = None
    return g


def check_gradients(f: Callable[[Tensor], object], x: Tensor, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    tape = tape_gradient(f, x)
    numeric = finite_difference_gradient(f, x, eps)
    denom = np.maximum(np.maximum(np.abs(tape), np.abs(numeric)), 1e-8)
    rel = np.abs(tape - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(
        max_rel_err=max_rel,
        worst_coordinate=tuple(int(c) for c in worst),
        passed=max_rel <= tol,
        tape=tape,
        numeric=numeric,
    )
