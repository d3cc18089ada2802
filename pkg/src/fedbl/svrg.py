"""Variance-reduced federated solver with periodic averaging.

Each node runs SVRG-style steps on its own component sum; every `period`
steps the center replaces all node states with the w-weighted average of
their stepped states.  The returned point is the weighted running average
of the virtual mean state x^(t) = sum_k w_k x_k^(t) with geometrically
increasing weights u_t = (1 - min(step*mu, q/4))^-(t+1), accumulated in a
normalized form that cannot overflow on long runs.

Per node and call, randomness is pre-drawn from the node's counter-based
stream: the T component indices first, then the T refresh coins.  Results
are therefore independent of sequencing and of the worker count.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import WeightVector
from .errors import DimensionMismatchError, DivergenceError
from .network import FederatedNetwork
from .schedules import gamma0

__all__ = ["SvrgConfig", "FiniteSumInstance", "SvrgResult", "local_svrg_solve",
           "svrg_component_estimate"]


@dataclass(frozen=True)
class SvrgConfig:
    """Knob set for one solver call: step size, averaging period tau,
    reference refresh probability q, and iteration count T."""

    step: float
    period: int
    refresh_prob: float
    iters: int

    def __post_init__(self):
        if not (self.step > 0.0):
            raise ValueError(f"step must be positive, got {self.step}")
        if int(self.period) != self.period or self.period < 1:
            raise ValueError(f"period must be an integer >= 1, got {self.period}")
        if not (0.0 < self.refresh_prob <= 1.0):
            raise ValueError(
                f"refresh probability must lie in (0, 1], got {self.refresh_prob}")
        if int(self.iters) != self.iters or self.iters < 1:
            raise ValueError(f"iteration count must be an integer >= 1, got {self.iters}")


@dataclass(frozen=True)
class FiniteSumInstance:
    """K-node finite-sum problem min_x sum_k w_k (1/n_k) sum_i f_ki(x).

    grad_component(k, i, x) and grad_full_node(k, x) use 0-based node and
    sample indices.  batch_grad_components, when provided, evaluates each
    node's chosen component at that node's own point in one call; it is
    the fast path of the solver.
    """

    dim: int
    n_per_node: tuple[int, ...]
    mu: float
    smooth: float
    grad_component: Callable[[int, int, np.ndarray], np.ndarray]
    grad_full_node: Callable[[int, np.ndarray], np.ndarray]
    batch_grad_components: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("instance dimension must be >= 1")
        if not self.n_per_node or any(n < 1 for n in self.n_per_node):
            raise ValueError("every node needs at least one component")
        if not (self.mu > 0.0) or not (self.smooth > 0.0):
            raise ValueError(f"need positive mu and smoothness, got {self.mu}, {self.smooth}")

    @property
    def k(self) -> int:
        return len(self.n_per_node)


@dataclass(frozen=True)
class SvrgResult:
    """x_avg is the weighted-average output; x_final the virtual mean of
    the last iterate; trajectory (optional) stacks the virtual means
    x^(0..T) row-wise."""

    x_avg: np.ndarray
    x_final: np.ndarray
    trajectory: Optional[np.ndarray]
    iters: int


def svrg_component_estimate(inst: FiniteSumInstance, k: int, i: int,
                            x: np.ndarray, y: np.ndarray,
                            full_at_ref: np.ndarray) -> np.ndarray:
    """Control-variate estimate grad f_ki(x) - grad f_ki(y) + grad f_k(y);
    full_at_ref caches grad f_k(y)."""
    return inst.grad_component(k, i, x) - inst.grad_component(k, i, y) + full_at_ref


class _RunningAverage:
    """Weighted mean of the virtual iterates with u_t = (1-rho)^-(t+1).

    Tracks a_t = U_t/u_t = a_{t-1}*(1-rho) + 1, which stays inside
    [1, 1/rho], so no quantity ever overflows.
    """

    def __init__(self, rho: float, x0: np.ndarray):
        self.decay = 1.0 - rho
        self.a = 1.0
        self.mean = x0.astype(float).copy()

    def push(self, x: np.ndarray) -> None:
        self.a = self.a * self.decay + 1.0
        self.mean += (x - self.mean) / self.a


def _draw_all(net: FederatedNetwork, call_id: int, n_per_node, iters: int,
              refresh_prob: float):
    """Pre-draw every random decision of the call for each node."""
    idx = np.empty((len(n_per_node), iters), dtype=np.int64)
    coin = np.empty((len(n_per_node), iters), dtype=bool)
    for k, n_k in enumerate(n_per_node):
        rng = net.node_stream(k + 1, call_id)
        idx[k] = rng.integers(0, n_k, size=iters)
        coin[k] = rng.random(size=iters) < refresh_prob
    return idx, coin


def local_svrg_solve(inst: FiniteSumInstance, w: WeightVector, x0,
                     cfg: SvrgConfig, net: FederatedNetwork,
                     record_trajectory: bool = False) -> SvrgResult:
    """Run T iterations from the common start x0.

    Communication: one aggregation round every `period` iterations plus
    one final output round, i.e. floor(T/period) + 1 rounds in total.
    """
    wv = np.asarray(w, dtype=float)
    if wv.size != inst.k:
        raise DimensionMismatchError(f"{wv.size} weights for {inst.k} nodes")
    if net.n_nodes != inst.k:
        raise DimensionMismatchError(
            f"network has {net.n_nodes} nodes, instance has {inst.k}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (inst.dim,):
        raise DimensionMismatchError(f"x0 must have shape ({inst.dim},), got {x0.shape}")

    try:
        ceiling = gamma0(inst.smooth, inst.mu, cfg.period, cfg.refresh_prob)
    except ValueError:
        ceiling = None
    if ceiling is not None and cfg.step > ceiling * (1.0 + 1e-12):
        warnings.warn(
            f"step {cfg.step:.3g} exceeds the safe ceiling {ceiling:.3g} "
            f"for this instance; continuing anyway", RuntimeWarning, stacklevel=2)

    call_id = net.new_call()
    idx, coin = _draw_all(net, call_id, inst.n_per_node, cfg.iters, cfg.refresh_prob)
    rho = min(cfg.step * inst.mu, cfg.refresh_prob / 4.0)
    avg = _RunningAverage(rho, x0)
    traj = [x0.copy()] if record_trajectory else None

    if inst.batch_grad_components is not None:
        x_final = _run_vectorized(inst, wv, x0, cfg, net, idx, coin, avg, traj)
    else:
        x_final = _run_blocked(inst, wv, x0, cfg, net, idx, coin, avg, traj)

    net.record_gather(inst.dim)  # output round: nodes ship their accumulators
    return SvrgResult(
        x_avg=avg.mean,
        x_final=x_final,
        trajectory=np.asarray(traj) if record_trajectory else None,
        iters=cfg.iters,
    )


def _refresh_full_grads(inst, points, hit, Gy, net):
    for k in np.flatnonzero(hit):
        Gy[k] = inst.grad_full_node(int(k), points[k])
        net.ledger.add_ops(inst.n_per_node[k])


def _note_virtual(virtual, t, avg, traj):
    if not np.all(np.isfinite(virtual)):
        raise DivergenceError(f"iterate became non-finite at iteration {t}", t)
    avg.push(virtual)
    if traj is not None:
        traj.append(np.array(virtual))


def _run_vectorized(inst, wv, x0, cfg, net, idx, coin, avg, traj):
    """All-node state as one (K, d) matrix, stepped in lockstep."""
    K = inst.k
    X = np.tile(x0, (K, 1))
    Y = X.copy()
    Gy = np.stack([inst.grad_full_node(k, Y[k]) for k in range(K)])
    net.ledger.add_ops(sum(inst.n_per_node))

    for t in range(cfg.iters):
        gx = inst.batch_grad_components(idx[:, t], X)
        gy = inst.batch_grad_components(idx[:, t], Y)
        g = gx - gy + Gy
        net.ledger.add_ops(2 * K)
        hit = coin[:, t]
        if hit.any():
            Y[hit] = X[hit]
            _refresh_full_grads(inst, Y, hit, Gy, net)
        stepped = X - cfg.step * g
        if (t + 1) % cfg.period == 0:
            virtual = net.weighted_aggregate(stepped, wv)
            X = np.tile(virtual, (K, 1))
        else:
            X = stepped
            virtual = wv @ X
        _note_virtual(virtual, t + 1, avg, traj)
    return wv @ X


def _run_blocked(inst, wv, x0, cfg, net, idx, coin, avg, traj):
    """Generic path: each node advances one averaging block at a time;
    node blocks may run on worker threads."""
    K, d = inst.k, inst.dim
    states = [x0.copy() for _ in range(K)]
    refs = [x0.copy() for _ in range(K)]
    full = [inst.grad_full_node(k, refs[k]) for k in range(K)]
    net.ledger.add_ops(sum(inst.n_per_node))

    def node_block(args):
        k, x, y, gy, t0, t1 = args
        x, y, gy = x.copy(), y.copy(), gy.copy()
        path = np.empty((t1 - t0, d))
        ops = 0
        for t in range(t0, t1):
            path[t - t0] = x
            g = svrg_component_estimate(inst, k, int(idx[k, t]), x, y, gy)
            ops += 2
            if coin[k, t]:
                y = x.copy()
                gy = inst.grad_full_node(k, y)
                ops += inst.n_per_node[k]
            x = x - cfg.step * g
        return x, y, gy, path, ops

    t0 = 0
    virtual = x0
    while t0 < cfg.iters:
        t1 = min(t0 + cfg.period, cfg.iters)
        out = net.map_nodes(node_block,
                            [(k, states[k], refs[k], full[k], t0, t1)
                             for k in range(K)])
        net.ledger.add_ops(sum(o[4] for o in out))
        stepped = np.stack([o[0] for o in out])
        paths = np.stack([o[3] for o in out])           # (K, block, d)
        interior = np.einsum("k,ktd->td", wv, paths)     # x^(t0..t1-1)
        for rel in range(1, t1 - t0):
            _note_virtual(interior[rel], t0 + rel, avg, traj)
        if t1 % cfg.period == 0:
            virtual = net.weighted_aggregate(stepped, wv)
            states = [virtual.copy() for _ in range(K)]
        else:
            states = list(stepped)
            virtual = wv @ stepped
        _note_virtual(virtual, t1, avg, traj)
        refs = [o[1] for o in out]
        full = [o[2] for o in out]
        t0 = t1
    return np.array(virtual)
