"""Outer loops that move the node weights w on the capped simplex using
approximate hypergradients.

solve_convex runs the accelerated scheme: a momentum probe point w_md,
one hypergradient there, then two prox-linear steps with step sizes
eta*(s+1)/4 (state) and eta (output candidate).  solve_nonconvex runs
plain prox-linear descent and returns a uniformly sampled iterate, the
matching stationarity notion being the projected-gradient residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import FederatedDataset, WeightVector
from .errors import ConfigError
from .hypergrad import HypergradResult, approx_hypergrad, lipschitz_LF
from .losses import LossConstants, LossModel, empirical_grad, empirical_loss
from .network import FederatedNetwork
from .schedules import SCHEDULE_NAMES, gamma0, inner_schedule
from .simplex import project, prox_linear_step
from .svrg import SvrgConfig

__all__ = ["OuterConfig", "TraceRow", "OuterTrace", "stationarity",
           "solve_convex", "solve_nonconvex"]


@dataclass(frozen=True)
class OuterConfig:
    """Outer-loop knobs.

    eta None means 1/(3 * lipschitz_LF) with the gradient bound l0
    estimated at the start and eta frozen thereafter.  The fixed schedule
    needs gamma (None selects the safe ceiling) and inner_iters; theory
    schedules derive both from round index s.  radius optionally bounds
    ||theta|| for diagnostics only.
    """

    rounds: int
    cap: float
    period: int = 10
    refresh_prob: float = 0.02
    schedule: str = "fixed"
    gamma: Optional[float] = None
    inner_iters: Optional[int] = None
    eta: Optional[float] = None
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0
    radius: Optional[float] = None
    warm_start: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.schedule not in SCHEDULE_NAMES:
            raise ConfigError(
                f"unknown schedule {self.schedule!r}; expected one of {SCHEDULE_NAMES}")
        if self.schedule == "fixed" and self.inner_iters is None:
            raise ConfigError("fixed schedule requires inner_iters")
        if self.schedule.endswith("_tau1") and self.period != 1:
            raise ConfigError(f"{self.schedule} requires period 1, got {self.period}")
        if self.schedule.endswith("_taugt1") and self.period <= 1:
            raise ConfigError(f"{self.schedule} requires period > 1, got {self.period}")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")


@dataclass(frozen=True)
class TraceRow:
    """One outer round: where the gradient was taken (w_probe), the
    updated candidate (w_after), and the diagnostics of that round.
    Ledger numbers are cumulative at the end of the round."""

    s: int
    gamma: float
    inner_iters: int
    w_probe: np.ndarray
    w_after: np.ndarray
    f_hat: float
    stationarity: float
    grad: np.ndarray
    theta: np.ndarray
    inner_residual: float
    qp_residual: float
    ledger: dict


@dataclass
class OuterTrace:
    """Complete record of one outer solve."""

    rows: list[TraceRow] = field(default_factory=list)
    eta: float = float("nan")
    constants: Optional[LossConstants] = None
    l0_estimate: float = float("nan")
    theta_norm_max: float = 0.0
    selected_index: Optional[int] = None

    @property
    def weights_path(self) -> np.ndarray:
        return np.stack([r.w_after for r in self.rows])


def stationarity(w, grad, eta: float, cap: float) -> float:
    """Projected-gradient residual norm ||w - P(w - eta*grad)|| / eta."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    wv = np.asarray(w, dtype=float)
    moved = project(wv - eta * np.asarray(grad, dtype=float), cap).weights
    return float(np.linalg.norm(wv - np.asarray(moved)) / eta)


class _Setup:
    """Constants, eta, and the per-round (step, budget) rule shared by
    both outer solvers."""

    def __init__(self, model: LossModel, fed: FederatedDataset, cfg: OuterConfig):
        self.constants = model.constants(fed)
        # bootstrap gradient bound at the inner start point
        theta0 = np.zeros(fed.dim)
        norms = [float(np.linalg.norm(empirical_grad(model, nd, theta0)))
                 for nd in fed.all_shards()]
        self.l0 = max(max(norms), 1e-12)
        lf = lipschitz_LF(self.l0, self.constants.l1, self.constants.l2,
                          self.constants.mu, fed.k)
        self.eta = cfg.eta if cfg.eta is not None else 1.0 / (3.0 * lf)
        self.cfg = cfg
        if cfg.schedule == "fixed":
            self.gamma_fixed = cfg.gamma if cfg.gamma is not None else gamma0(
                self.constants.l1, self.constants.mu, cfg.period, cfg.refresh_prob)
        else:
            self.gamma_ceiling = gamma0(
                self.constants.l1, self.constants.mu, cfg.period, cfg.refresh_prob)

    def round_budget(self, s: int) -> SvrgConfig:
        cfg = self.cfg
        if cfg.schedule == "fixed":
            step, iters = inner_schedule("fixed", s, 0.0, self.constants.mu,
                                         cfg.period, fixed_step=self.gamma_fixed,
                                         fixed_iters=cfg.inner_iters)
        else:
            step, iters = inner_schedule(cfg.schedule, s, self.gamma_ceiling,
                                         self.constants.mu, cfg.period,
                                         cfg.a1, cfg.a2, cfg.a3)
        # complete averaging blocks keep the round count analytic:
        # ceil(T/period) blocks, each ending in one aggregation
        iters = cfg.period * math.ceil(iters / cfg.period)
        return SvrgConfig(step=step, period=cfg.period,
                          refresh_prob=cfg.refresh_prob, iters=iters)


def _observe(trace: OuterTrace, model, fed, hg: HypergradResult):
    g0_norm = float(np.linalg.norm(empirical_grad(model, fed.validation, hg.theta)))
    node_norm = float(np.max(np.linalg.norm(hg.node_grads, axis=1)))
    trace.l0_estimate = max(trace.l0_estimate, node_norm, g0_norm)
    trace.theta_norm_max = max(trace.theta_norm_max,
                               float(np.linalg.norm(hg.theta)))


def _check_w0(w0: WeightVector, cfg: OuterConfig):
    if abs(w0.cap - cfg.cap) > 1e-12:
        raise ConfigError(
            f"initial weights have cap {w0.cap}, config says {cfg.cap}")


def solve_convex(model: LossModel, fed: FederatedDataset, w0: WeightVector,
                 cfg: OuterConfig, net: FederatedNetwork) -> tuple[WeightVector, OuterTrace]:
    """Accelerated outer descent; returns the aggregated candidate after
    cfg.rounds rounds."""
    _check_w0(w0, cfg)
    setup = _Setup(model, fed, cfg)
    trace = OuterTrace(eta=setup.eta, constants=setup.constants,
                       l0_estimate=setup.l0)
    eta, b = setup.eta, cfg.cap

    w = np.asarray(w0, dtype=float)
    w_ag = w.copy()
    theta_prev = None
    for s in range(cfg.rounds):
        w_md = (2.0 / (s + 2)) * w + (s / (s + 2.0)) * w_ag
        budget = setup.round_budget(s)
        theta0 = theta_prev if (cfg.warm_start and theta_prev is not None) else None
        hg = approx_hypergrad(model, fed, WeightVector(w_md, b), budget, budget,
                              net, theta0=theta0, constants=setup.constants)
        theta_prev = hg.theta
        _observe(trace, model, fed, hg)
        stat = stationarity(w_md, hg.grad, eta, b)
        w = np.asarray(prox_linear_step(hg.grad, WeightVector(w, b),
                                        eta * (s + 1) / 4.0, b))
        w_ag = np.asarray(prox_linear_step(hg.grad, WeightVector(w_md, b), eta, b))
        trace.rows.append(TraceRow(
            s=s, gamma=budget.step, inner_iters=budget.iters,
            w_probe=w_md, w_after=w_ag.copy(),
            f_hat=empirical_loss(model, fed.validation, hg.theta),
            stationarity=stat, grad=hg.grad, theta=hg.theta,
            inner_residual=hg.inner_residual, qp_residual=hg.qp_residual,
            ledger=net.ledger.snapshot()))
    return WeightVector(w_ag, b), trace


def solve_nonconvex(model: LossModel, fed: FederatedDataset, w0: WeightVector,
                    cfg: OuterConfig, net: FederatedNetwork) -> tuple[WeightVector, OuterTrace]:
    """Prox-linear descent; returns an iterate sampled uniformly from the
    visited states (the full path stays available in the trace)."""
    _check_w0(w0, cfg)
    setup = _Setup(model, fed, cfg)
    trace = OuterTrace(eta=setup.eta, constants=setup.constants,
                       l0_estimate=setup.l0)
    eta, b = setup.eta, cfg.cap

    w = np.asarray(w0, dtype=float)
    iterates = [w.copy()]
    theta_prev = None
    for s in range(cfg.rounds):
        budget = setup.round_budget(s)
        theta0 = theta_prev if (cfg.warm_start and theta_prev is not None) else None
        hg = approx_hypergrad(model, fed, WeightVector(w, b), budget, budget,
                              net, theta0=theta0, constants=setup.constants)
        theta_prev = hg.theta
        _observe(trace, model, fed, hg)
        stat = stationarity(w, hg.grad, eta, b)
        w_next = np.asarray(prox_linear_step(hg.grad, WeightVector(w, b), eta, b))
        trace.rows.append(TraceRow(
            s=s, gamma=budget.step, inner_iters=budget.iters,
            w_probe=w.copy(), w_after=w_next.copy(),
            f_hat=empirical_loss(model, fed.validation, hg.theta),
            stationarity=stat, grad=hg.grad, theta=hg.theta,
            inner_residual=hg.inner_residual, qp_residual=hg.qp_residual,
            ledger=net.ledger.snapshot()))
        iterates.append(w_next)
        w = w_next
    pick = int(net.center_stream(net.new_call()).integers(0, cfg.rounds))
    trace.selected_index = pick
    return WeightVector(iterates[pick], b), trace
