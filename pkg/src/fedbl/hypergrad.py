"""Gradient of the outer objective F(w) = validation loss of the inner
minimizer, without materializing the inverse Hessian.

The exact gradient is grad_k F = -grad L_k(theta)^T H(w)^-1 grad L_0(theta)
with H(w) the weighted training Hessian.  The approximate path replaces
theta by a federated inner solve and H^-1 grad L_0 by the minimizer of the
quadratic 0.5 h^T H h - h^T grad L_0, itself a finite sum over the same
nodes and samples, so both stages reuse the Local-SVRG engine and inherit
its communication pattern.  A dense oracle (Newton plus one linear solve)
backs the diagnostics and the tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import FederatedDataset, WeightVector
from .errors import SingularSystemError
from .losses import (LossConstants, LossModel, empirical_grad, weighted_grad,
                     weighted_objective)
from .network import FederatedNetwork
from .svrg import FiniteSumInstance, SvrgConfig, SvrgResult, local_svrg_solve

__all__ = [
    "HypergradResult",
    "inner_instance",
    "qp_instance",
    "approx_hypergrad",
    "solve_inner_dense",
    "dense_hypergrad_oracle",
    "lipschitz_LF",
]

_DENSE_DIM = 200


@dataclass(frozen=True)
class HypergradResult:
    """grad is the outer gradient estimate (one entry per node); theta and
    h are the inner solution and the quadratic-subproblem solution behind
    it.  node_grads stacks grad L_k(theta) row-wise.  The residuals are
    the weighted gradient norms of the two inner solves (0 for the dense
    oracle)."""

    grad: np.ndarray
    theta: np.ndarray
    h: np.ndarray
    node_grads: np.ndarray
    inner_residual: float
    qp_residual: float


def _stacked_features(fed: FederatedDataset):
    """(K, n, d) feature tensor and (K, n) target matrix when every node
    holds the same number of samples, else None."""
    ns = set(fed.n_per_node)
    if len(ns) != 1:
        return None, None
    F = np.stack([nd.features for nd in fed.nodes])
    T = np.stack([nd.targets for nd in fed.nodes])
    return F, T


def inner_instance(model: LossModel, fed: FederatedDataset,
                   constants: Optional[LossConstants] = None) -> FiniteSumInstance:
    """Finite-sum view of the weighted training objective."""
    if constants is None:
        constants = model.constants(fed)
    nodes = fed.nodes
    F, T = _stacked_features(fed)

    def grad_component(k, i, x):
        return model.sample_grad(x, nodes[k][i])

    def grad_full_node(k, x):
        nd = nodes[k]
        return model.mean_grad(x, nd.features, nd.targets)

    if F is not None:
        rows = np.arange(fed.k)

        def batch(idx, thetas):
            return model.batch_sample_grads(thetas, F[rows, idx], T[rows, idx])
    else:
        def batch(idx, thetas):
            return np.stack([model.sample_grad(thetas[k], nodes[k][int(idx[k])])
                             for k in range(fed.k)])

    return FiniteSumInstance(
        dim=fed.dim,
        n_per_node=fed.n_per_node,
        mu=constants.mu,
        smooth=constants.l1,
        grad_component=grad_component,
        grad_full_node=grad_full_node,
        batch_grad_components=batch,
    )


def qp_instance(model: LossModel, fed: FederatedDataset, theta: np.ndarray,
                rhs: np.ndarray, w=None,
                constants: Optional[LossConstants] = None) -> FiniteSumInstance:
    """Finite-sum view of 0.5 h^T H(theta) h - h^T rhs, with per-sample
    components 0.5 h^T (sample Hessian at theta) h - h^T rhs.

    Curvature is frozen at theta, so per-sample Hessian coefficients are
    precomputed once.  When w is given and the dimension permits, the
    instance mu is the smallest eigenvalue of the weighted Hessian, which
    can only sharpen the model-level bound.
    """
    if constants is None:
        constants = model.constants(fed)
    theta = np.asarray(theta, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    d = fed.dim
    nodes = fed.nodes
    ridge = model.ridge

    coeffs = [model.curvature_coeffs(theta, nd.features, nd.targets)
              for nd in nodes]
    structured = all(c is not None for c in coeffs)

    if d <= _DENSE_DIM:
        hessians = [model.mean_hessian(theta, nd.features, nd.targets)
                    for nd in nodes]
    else:
        hessians = None

    mu = constants.mu
    if w is not None and hessians is not None:
        H = sum(wk * Hk for wk, Hk in zip(np.asarray(w, dtype=float), hessians))
        mu = max(mu, float(np.linalg.eigvalsh(H)[0]))

    if structured:
        def grad_component(k, i, h):
            x = nodes[k].features[i]
            return coeffs[k][i] * float(x @ h) * x + ridge * h - rhs
    else:
        def grad_component(k, i, h):
            return model.sample_hvp(theta, nodes[k][i], h) - rhs

    if hessians is not None:
        def grad_full_node(k, h):
            return hessians[k] @ h - rhs
    else:
        def grad_full_node(k, h):
            nd = nodes[k]
            return model.mean_hvp(theta, nd.features, nd.targets, h) - rhs

    batch = None
    if structured:
        F, _ = _stacked_features(fed)
        if F is not None:
            A = np.stack(coeffs)          # (K, n)
            rows = np.arange(fed.k)

            def batch(idx, hs):
                Xs = F[rows, idx]          # (K, d)
                a = A[rows, idx]
                dots = np.einsum("kd,kd->k", Xs, hs)
                return (a * dots)[:, None] * Xs + ridge * hs - rhs

    return FiniteSumInstance(
        dim=d,
        n_per_node=fed.n_per_node,
        mu=mu,
        smooth=constants.l1,
        grad_component=grad_component,
        grad_full_node=grad_full_node,
        batch_grad_components=batch,
    )


def approx_hypergrad(model: LossModel, fed: FederatedDataset, w: WeightVector,
                     inner_cfg: SvrgConfig, qp_cfg: SvrgConfig,
                     net: FederatedNetwork, theta0=None,
                     constants: Optional[LossConstants] = None) -> HypergradResult:
    """Two federated solves plus four constant-size exchange rounds:
    ship theta, ship the validation gradient, ship h, gather the node
    gradients that form the outer gradient entries."""
    if constants is None:
        constants = model.constants(fed)
    d = fed.dim
    if theta0 is None:
        theta0 = np.zeros(d)

    inner = inner_instance(model, fed, constants)
    inner_out: SvrgResult = local_svrg_solve(inner, w, theta0, inner_cfg, net)
    theta = inner_out.x_avg
    net.record_broadcast(d)

    g0 = empirical_grad(model, fed.validation, theta)
    net.ledger.add_ops(fed.validation.n)
    net.record_broadcast(d)

    qp = qp_instance(model, fed, theta, g0, w, constants)
    qp_out = local_svrg_solve(qp, w, np.zeros(d), qp_cfg, net)
    h = qp_out.x_avg
    net.record_broadcast(d)

    node_grads = np.stack([empirical_grad(model, nd, theta) for nd in fed.nodes])
    net.ledger.add_ops(sum(fed.n_per_node))
    net.record_gather(d)

    # residuals are diagnostics; they reuse already-shipped quantities
    wv = np.asarray(w, dtype=float)
    inner_residual = float(np.linalg.norm(wv @ node_grads))
    qp_gap = sum(wk * qp.grad_full_node(k, h) for k, wk in enumerate(wv))
    qp_residual = float(np.linalg.norm(qp_gap))

    return HypergradResult(
        grad=-(node_grads @ h),
        theta=theta,
        h=h,
        node_grads=node_grads,
        inner_residual=inner_residual,
        qp_residual=qp_residual,
    )


def _solve_spd(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense symmetric solve with a conditioning guard."""
    evals = np.linalg.eigvalsh(H)
    if evals[0] <= 0.0 or evals[-1] / evals[0] > 1e12:
        raise SingularSystemError(
            f"weighted Hessian is numerically singular "
            f"(eigenvalue range [{evals[0]:.3g}, {evals[-1]:.3g}])")
    return np.linalg.solve(H, rhs)


def _weighted_hessian(model, fed, w, theta) -> np.ndarray:
    wv = np.asarray(w, dtype=float)
    H = np.zeros((fed.dim, fed.dim))
    for wk, nd in zip(wv, fed.nodes):
        if wk != 0.0:
            H += wk * model.mean_hessian(theta, nd.features, nd.targets)
    return H


def solve_inner_dense(model: LossModel, fed: FederatedDataset, w,
                      tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Damped-Newton reference solve of the weighted training objective."""
    if fed.dim > _DENSE_DIM:
        raise ValueError(f"dense solve limited to dimension {_DENSE_DIM}")
    theta = np.zeros(fed.dim)
    wvec = w if isinstance(w, WeightVector) else WeightVector(np.asarray(w, float), 1.0)
    for _ in range(max_iter):
        g = weighted_grad(model, fed, wvec, theta)
        if float(np.linalg.norm(g)) <= tol:
            break
        H = _weighted_hessian(model, fed, wvec, theta)
        step = _solve_spd(H, g)
        f0 = weighted_objective(model, fed, wvec, theta)
        slope = float(g @ step)
        eta = 1.0
        for _ in range(60):
            cand = theta - eta * step
            if weighted_objective(model, fed, wvec, cand) <= f0 - 1e-4 * eta * slope:
                break
            eta *= 0.5
        theta = theta - eta * step
    return theta


def dense_hypergrad_oracle(model: LossModel, fed: FederatedDataset, w,
                           tol: float = 1e-12) -> HypergradResult:
    """Exact outer gradient by Newton inner solve and one dense linear
    solve; intended for small dimensions and for verifying the federated
    approximation."""
    theta = solve_inner_dense(model, fed, w, tol=tol)
    H = _weighted_hessian(model, fed, w, theta)
    g0 = empirical_grad(model, fed.validation, theta)
    h = _solve_spd(H, g0)
    node_grads = np.stack([empirical_grad(model, nd, theta) for nd in fed.nodes])
    return HypergradResult(
        grad=-(node_grads @ h),
        theta=theta,
        h=h,
        node_grads=node_grads,
        inner_residual=0.0,
        qp_residual=0.0,
    )


def lipschitz_LF(l0: float, l1: float, l2: float, mu: float, k: int) -> float:
    """Smoothness constant of the outer objective:
    (2 l0 l1/mu + l2 l0^2/mu^2) * (sqrt(K) l0/mu) + K l1 l0^2/mu^2."""
    if min(l0, l1, mu) <= 0 or l2 < 0 or k < 1:
        raise ValueError(
            f"need l0, l1, mu > 0, l2 >= 0, k >= 1; got {(l0, l1, l2, mu, k)}")
    return ((2.0 * l0 * l1 / mu + l2 * l0 * l0 / (mu * mu))
            * (np.sqrt(k) * l0 / mu)
            + k * l1 * l0 * l0 / (mu * mu))
