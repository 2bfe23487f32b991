"""Central finite-difference gradient checking.

The oracle here never touches the tape: it perturbs parameter buffers in
place and re-evaluates a scalar function, so it is independent of every
backward rule it is used to validate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, no_grad, zero_grad

log = logging.getLogger(__name__)


def finite_difference(func: Callable[[], float], param: Tensor, h: float = 1e-5,
                      entries: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of ``func`` w.r.t. ``param`` (flat, at ``entries`` or all)."""
    flat = param.data.reshape(-1)
    which = np.arange(flat.size) if entries is None else np.asarray(entries)
    grad = np.zeros(which.size, dtype=np.float64)
    for n, i in enumerate(which):
        orig = flat[i]
        flat[i] = orig + h
        fplus = float(func())
        flat[i] = orig - h
        fminus = float(func())
        flat[i] = orig
        grad[n] = (fplus - fminus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def roundoff_bound(f_value: float, h: float, entries: int, dtype=np.float64, safety: float = 100.0) -> float:
    """Largest difference-quotient norm explainable by rounding alone.

    Each quotient carries about ``eps * |f| / h`` of cancellation error;
    ``safety`` covers the accumulation inside ``f``.
    """
    eps = np.finfo(dtype).eps
    return float(safety * eps * max(abs(f_value), 1.0) / h * np.sqrt(max(entries, 1)))


def max_elementwise_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                                   floor: float = 1e-12) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


@dataclass
class GradCheckResult:
    name: str
    size: int
    checked: int
    error: float  # norm-wise relative error
    abs_error: float = 0.0  # ||analytic - numeric||
    noise: float = 0.0  # round-off bound on the difference quotients
    scale: float = 0.0  # max(||analytic||, ||numeric||)

    @property
    def vanishing(self) -> bool:
        """Both gradients are indistinguishable from zero at this step size."""
        return self.abs_error <= self.noise and self.scale <= self.noise

    def ok(self, tol: float) -> bool:
        return self.error < tol or self.vanishing


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5,
                    max_entries: int | None = None, seed: int = 0) -> list[GradCheckResult]:
    """Compare tape gradients of ``loss_fn()`` with central differences, per parameter.

    ``loss_fn`` must rebuild the graph from the current parameter buffers
    on every call and be deterministic. With ``max_entries`` set, larger
    tensors are checked on a seeded random subset of entries.
    """
    rng = np.random.default_rng(seed)
    zero_grad(params.values())
    loss = loss_fn()
    f0 = loss.item()
    backward(loss)
    results = []

    def value() -> float:
        with no_grad():
            return loss_fn().item()

    for name, p in params.items():
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).astype(np.float64)
        entries = None
        if max_entries is not None and p.size > max_entries:
            entries = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        numeric = finite_difference(value, p, h=h, entries=entries)
        a = analytic if entries is None else analytic[entries]
        err = relative_error(a, numeric)
        res = GradCheckResult(name, p.size, numeric.size, err,
                              abs_error=float(np.linalg.norm(a - numeric)),
                              noise=roundoff_bound(f0, h, numeric.size, p.dtype),
                              scale=float(max(np.linalg.norm(a), np.linalg.norm(numeric))))
        log.debug("gradcheck %s: rel err %.3e (abs %.2e, noise %.2e)", name, err, res.abs_error, res.noise)
        results.append(res)
    zero_grad(params.values())
    return results
