"""Euclidean projection onto the capped simplex
{w : sum(w) = 1, 0 <= w_k <= b} and the prox step built on it.

The projection solves min ||w - v||^2 by bisecting on the shift lambda in
w_k = clamp(v_k - lambda, 0, b): the residual sum(w) - 1 is continuous and
non-increasing in lambda, so 60 halvings of the bracket
[min(v) - 1, max(v)] pin lambda down, and one exact piecewise-linear
correction on the free coordinates removes the remaining bisection error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import WeightVector, as_vector
from .errors import EmptyFeasibleSetError

__all__ = ["ProjectionResult", "project", "prox_linear_step"]

_BISECT_ITERS = 60


@dataclass(frozen=True)
class ProjectionResult:
    """Projection output with its optimality certificate.

    multiplier is the shift lambda such that w = clamp(v - lambda, 0, b);
    active_lo / active_hi list the coordinates clamped at 0 and at b.
    """

    weights: WeightVector
    multiplier: float
    active_lo: tuple[int, ...]
    active_hi: tuple[int, ...]


def project(v, cap: float) -> ProjectionResult:
    """Project v onto {w : sum(w) = 1, 0 <= w <= cap}.

    Raises EmptyFeasibleSetError when cap * len(v) < 1.  cap == 1/K is the
    degenerate single-point case and short-circuits to the uniform vector.
    """
    v = as_vector(v, "v")
    k = v.size
    b = float(cap)
    if not np.isfinite(b) or b <= 0.0:
        raise ValueError(f"cap must be positive, got {b}")
    if b * k < 1.0 - 1e-12:
        raise EmptyFeasibleSetError(
            f"cap {b} with {k} coordinates leaves the simplex empty"
        )
    if abs(b * k - 1.0) <= 1e-15 * k:
        # Single feasible point: every coordinate sits at the cap.
        w = WeightVector(np.full(k, 1.0 / k), b)
        lam = float(np.min(v) - b)
        return ProjectionResult(w, lam, (), tuple(range(k)))

    lo = float(np.min(v)) - 1.0
    hi = float(np.max(v))
    # sum(clamp(v - lo, 0, b)) >= k*b >= 1 and sum at hi is 0.
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        s = float(np.clip(v - mid, 0.0, b).sum())
        if s >= 1.0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)

    # The residual is linear in lambda wherever the free set is stable:
    # slope = -(number of free coordinates).  Two corrections land on the
    # exact root up to roundoff.
    for _ in range(2):
        w = np.clip(v - lam, 0.0, b)
        free = (w > 0.0) & (w < b)
        m = int(free.sum())
        if m == 0:
            break
        lam += (float(w.sum()) - 1.0) / m

    w = np.clip(v - lam, 0.0, b)
    free = (w > 0.0) & (w < b)
    m = int(free.sum())
    if m > 0:
        # Spread the last ulp-scale residual over the free coordinates.
        w[free] -= (float(w.sum()) - 1.0) / m
        w = np.clip(w, 0.0, b)

    lo_idx = tuple(int(i) for i in np.flatnonzero(v - lam <= 0.0))
    hi_idx = tuple(int(i) for i in np.flatnonzero(v - lam >= b))
    return ProjectionResult(WeightVector(w, b), float(lam), lo_idx, hi_idx)


def prox_linear_step(grad, w_ref: WeightVector, step: float, cap: float) -> WeightVector:
    """argmin_w <grad, w> + (1/(2*step)) ||w - w_ref||^2 over the capped
    simplex, i.e. the projection of w_ref - step * grad."""
    if not (step > 0.0):
        raise ValueError(f"step must be positive, got {step}")
    g = as_vector(grad, "grad")
    ref = np.asarray(w_ref.values if isinstance(w_ref, WeightVector) else w_ref,
                     dtype=float)
    if g.size != ref.size:
        raise ValueError(f"grad has {g.size} entries, reference has {ref.size}")
    return project(ref - step * g, cap).weights
