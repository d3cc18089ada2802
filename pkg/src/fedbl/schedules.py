"""Step-size ceiling and per-round inner budgets.

gamma0 is the largest locally safe SVRG step for a (smooth, mu)-instance
run with averaging period tau and reference-refresh probability q.  The
schedules grow the inner budget across outer rounds so that inner error
decays fast enough for the outer rate to survive; the taugt1 variants
shrink the step as 1/M_s instead of fixing it.
"""
from __future__ import annotations

import math

__all__ = ["gamma0", "inner_schedule", "SCHEDULE_NAMES"]

SCHEDULE_NAMES = (
    "convex_tau1",
    "convex_taugt1",
    "nonconvex_tau1",
    "nonconvex_taugt1",
    "fixed",
)


def gamma0(smooth: float, mu: float, period: int, refresh_prob: float) -> float:
    """Safe step ceiling min{3/(80 l1), variance term, q/(4 mu)}.

    The middle term penalizes infrequent averaging and is absent when
    period == 1.  q >= 1 with period > 1 is rejected (the term divides
    by 1 - q); q == 1 with period == 1 is legitimate.
    """
    if smooth <= 0 or mu <= 0:
        raise ValueError(f"need positive smoothness and mu, got {smooth}, {mu}")
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    q = float(refresh_prob)
    if not (0.0 < q <= 1.0):
        raise ValueError(f"refresh probability must lie in (0, 1], got {q}")
    terms = [3.0 / (80.0 * smooth), q / (4.0 * mu)]
    if period > 1:
        if q >= 1.0:
            raise ValueError("refresh probability 1 with period > 1 divides by 1 - q")
        tm1 = period - 1
        inner = 5.0 * math.e * tm1 * (6.0 * tm1 + 8.0 + 16.0 / (1.0 - q))
        terms.append(1.0 / (smooth * math.sqrt(inner)))
    return min(terms)


def inner_schedule(name: str, s: int, g0: float, mu: float, period: int,
                   a1: float = 1.0, a2: float = 1.0, a3: float = 1.0,
                   fixed_step: float | None = None,
                   fixed_iters: int | None = None) -> tuple[float, int]:
    """(step, iteration count) for outer round s (0-based).

    Budgets are floored at one iteration; sub-1 log arguments therefore
    cannot produce an empty inner run.
    """
    if s < 0:
        raise ValueError(f"outer round index must be >= 0, got {s}")
    if name == "fixed":
        if fixed_step is None or fixed_iters is None:
            raise ValueError("fixed schedule needs an explicit step and iteration count")
        if fixed_step <= 0 or fixed_iters < 1:
            raise ValueError("fixed schedule needs step > 0 and iters >= 1")
        return float(fixed_step), int(fixed_iters)
    if name not in SCHEDULE_NAMES:
        raise ValueError(f"unknown schedule {name!r}; expected one of {SCHEDULE_NAMES}")
    if g0 <= 0 or mu <= 0:
        raise ValueError(f"need positive step ceiling and mu, got {g0}, {mu}")

    if name.endswith("_tau1"):
        if period != 1:
            raise ValueError(f"{name} requires period 1, got {period}")
        power = 4 if name.startswith("convex") else 2
        arg = a1 * float(s + 1) ** power / g0
        iters = max(1, math.ceil(math.log(arg) / (g0 * mu))) if arg > 1.0 else 1
        return g0, iters

    if period <= 1:
        raise ValueError(f"{name} requires period > 1, got {period}")
    tm1 = period - 1
    growth = float(s + 1) ** (2 if name.startswith("convex") else 1)
    m_s = max(1.0 / g0, growth * math.sqrt(a1 + a2 * tm1 + a3 * tm1 * tm1))
    step = 1.0 / m_s
    arg = m_s ** 3
    iters = max(1, math.ceil(math.log(arg) * m_s / mu)) if arg > 1.0 else 1
    return step, iters
