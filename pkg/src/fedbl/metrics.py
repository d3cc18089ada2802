"""Population-level ground truth for synthetic tasks and the evaluation
metrics defined on top of it.

Quadratic truths carry closed forms: node k's population loss is
0.5 (theta - t_k)^T M (theta - t_k) + 0.5 v_k with M the feature second
moment, so the inner minimizer and outer objective are explicit.  Sampled
truths instead carry a distribution sampler and evaluate losses by Monte
Carlo with a frozen stream.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import FederatedDataset
from .errors import EmptyFeasibleSetError
from .losses import LossModel, empirical_grad, empirical_loss
from .simplex import project

__all__ = [
    "GroundTruth",
    "GapEstimate",
    "metric_G",
    "metric_G_population",
    "dist_to_Wstar",
    "verify_error_bound",
    "generalization_gap",
]


@dataclass(frozen=True)
class GroundTruth:
    """What the generator knows about a synthetic task.

    similar_nodes lists the 1-based ids of nodes whose distribution
    coincides with the validation distribution p0.  Exactly one of the
    closed-form block (theta_table, second_moment, noise_vars) or the
    sampled block (sampler, loss_model) is populated.  theta_star is the
    population minimizer for p0; w_star optionally records a known unique
    outer optimum.
    """

    n_nodes: int
    similar_nodes: tuple[int, ...]
    theta_star: Optional[np.ndarray] = None
    theta_table: Optional[np.ndarray] = None      # (K, d) node optima
    second_moment: Optional[np.ndarray] = None    # E[x x^T] under p0 and nodes
    noise_vars: Optional[np.ndarray] = None       # (K+1,), entry 0 = validation
    sampler: Optional[Callable[[int, int, np.random.Generator],
                               tuple[np.ndarray, np.ndarray]]] = None
    loss_model: Optional[LossModel] = None
    mc_samples: int = 100_000
    seed: int = 0
    w_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None

    def __post_init__(self):
        js = tuple(sorted(int(j) for j in self.similar_nodes))
        if any(j < 1 or j > self.n_nodes for j in js):
            raise ValueError(f"similar_nodes must lie in 1..{self.n_nodes}, got {js}")
        object.__setattr__(self, "similar_nodes", js)
        closed = self.theta_table is not None
        sampled = self.sampler is not None
        if closed == sampled:
            raise ValueError("exactly one of theta_table or sampler must be set")
        if closed and (self.second_moment is None or self.noise_vars is None):
            raise ValueError("closed-form truth needs second_moment and noise_vars")
        if sampled and self.loss_model is None:
            raise ValueError("sampled truth needs its loss family")

    @property
    def is_closed_form(self) -> bool:
        return self.theta_table is not None

    # --- closed-form pieces -------------------------------------------

    def theta_of_w(self, w) -> np.ndarray:
        """Population inner minimizer sum_k w_k t_k (closed form only)."""
        self._need_closed("theta_of_w")
        return np.asarray(w, dtype=float) @ self.theta_table

    def outer_value(self, w) -> float:
        """Population outer objective F(w) (closed form only)."""
        d = self.theta_of_w(w) - self.theta_star
        return float(0.5 * d @ self.second_moment @ d + 0.5 * self.noise_vars[0])

    def population_loss(self, theta, node_id: int = 0) -> float:
        """Population loss of node node_id (0 = validation) at theta; for
        sampled truths this is a Monte Carlo mean over a frozen stream."""
        if self.is_closed_form:
            t = self.theta_star if node_id == 0 else self.theta_table[node_id - 1]
            d = np.asarray(theta, dtype=float) - t
            return float(0.5 * d @ self.second_moment @ d
                         + 0.5 * self.noise_vars[node_id])
        X, y = self._mc_draw(node_id)
        return self.loss_model.mean_loss(np.asarray(theta, dtype=float), X, y)

    def population_grad(self, theta, node_id: int = 0) -> np.ndarray:
        if self.is_closed_form:
            t = self.theta_star if node_id == 0 else self.theta_table[node_id - 1]
            return self.second_moment @ (np.asarray(theta, dtype=float) - t)
        X, y = self._mc_draw(node_id)
        return self.loss_model.mean_grad(np.asarray(theta, dtype=float), X, y)

    def _mc_draw(self, node_id: int):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(self.seed, spawn_key=(3, node_id))))
        return self.sampler(node_id, self.mc_samples, rng)

    def _need_closed(self, what: str):
        if not self.is_closed_form:
            raise ValueError(f"{what} requires a closed-form ground truth")


@dataclass(frozen=True)
class GapEstimate:
    """Scalar estimate with its Monte Carlo standard error (0 when the
    value is exact)."""

    value: float
    std_error: float


def generalization_gap(truth: GroundTruth, theta) -> GapEstimate:
    """Population excess risk L0(theta) - L0(theta_star)."""
    theta = np.asarray(theta, dtype=float)
    if truth.is_closed_form:
        d = theta - truth.theta_star
        return GapEstimate(float(0.5 * d @ truth.second_moment @ d), 0.0)
    if truth.theta_star is None:
        raise ValueError("sampled truth is missing theta_star")
    X, y = truth._mc_draw(0)
    model = truth.loss_model
    # paired differences: shared draws cancel most of the Monte Carlo noise
    diff = model.sample_losses(theta, X, y) - model.sample_losses(truth.theta_star, X, y)
    return GapEstimate(float(diff.mean()),
                       float(diff.std(ddof=1) / np.sqrt(diff.size)))


def dist_to_Wstar(w, truth: GroundTruth, cap: float) -> float:
    """Euclidean distance from w to the optimal face
    {u on the capped simplex : u_k = 0 for k not similar}."""
    js = truth.similar_nodes
    if not js:
        raise ValueError("ground truth declares no similar nodes")
    if cap * len(js) < 1.0 - 1e-12:
        raise EmptyFeasibleSetError(
            f"cap {cap} cannot place all mass on {len(js)} similar nodes")
    wv = np.asarray(w, dtype=float)
    mask = np.zeros(wv.size, dtype=bool)
    mask[[j - 1 for j in js]] = True
    inside = project(wv[mask], cap).weights
    return float(np.sqrt(np.sum(wv[~mask] ** 2)
                         + np.sum((wv[mask] - np.asarray(inside)) ** 2)))


def verify_error_bound(f_values, f_star: float, truth: GroundTruth, r: float,
                       cap: float) -> float:
    """Empirical error-bound constant max Dist(w, W*) / (F(w) - F*)^(1/r)
    over the given (w, F(w)) samples; gaps below 1e-12 are skipped."""
    if r <= 0:
        raise ValueError(f"exponent r must be positive, got {r}")
    best = None
    for w, f in f_values:
        gap = float(f) - float(f_star)
        if gap < 1e-12:
            continue
        ratio = dist_to_Wstar(w, truth, cap) / gap ** (1.0 / r)
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise ValueError("all samples sit at the optimum; no ratio to report")
    return float(best)


def _ascend(value, grad, radius: float, starts: np.ndarray, iters: int) -> float:
    """Multi-start projected gradient ascent of a scalar function over
    the ball ||theta|| <= radius, with a self-tuning step."""

    def clip(theta):
        nrm = float(np.linalg.norm(theta))
        return theta if nrm <= radius else theta * (radius / nrm)

    best = -np.inf
    for theta in starts:
        theta = clip(np.array(theta, dtype=float))
        val = value(theta)
        step = radius / 4.0
        for _ in range(iters):
            g = grad(theta)
            gn = float(np.linalg.norm(g))
            if gn < 1e-14:
                break
            cand = clip(theta + step * (g / gn))
            cv = value(cand)
            if cv > val:
                theta, val = cand, cv
                step *= 1.3
            else:
                step *= 0.5
                if step < 1e-12 * radius:
                    break
        best = max(best, val)
    return best


def _metric_from_losses(loss_at, grad_at, n_nodes: int, dim: int, radius: float,
                        n_probe: int, starts: int, iters: int, seed: int) -> float:
    def phi(theta):
        l0 = loss_at(theta, 0)
        return sum((l0 - loss_at(theta, k)) ** 2 for k in range(1, n_nodes + 1))

    def phi_grad(theta):
        l0, g0 = loss_at(theta, 0), grad_at(theta, 0)
        acc = np.zeros(dim)
        for k in range(1, n_nodes + 1):
            acc += 2.0 * (l0 - loss_at(theta, k)) * (g0 - grad_at(theta, k))
        return acc

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    probes = rng.standard_normal((n_probe, dim))
    norms = np.linalg.norm(probes, axis=1, keepdims=True)
    radii = radius * rng.random((n_probe, 1)) ** (1.0 / dim)
    probes = probes / np.maximum(norms, 1e-300) * radii
    probe_best = max((phi(p) for p in probes), default=0.0)

    pick = rng.permutation(n_probe)[:max(starts - 1, 1)]
    start_pts = np.vstack([np.zeros((1, dim)), probes[pick]])
    best = _ascend(phi, phi_grad, radius, start_pts, iters)
    return float(np.sqrt(max(best, probe_best, 0.0)))


def metric_G(model: LossModel, fed: FederatedDataset, radius: float,
             n_probe: int = 1000, starts: int = 20, iters: int = 300,
             seed: int = 0) -> float:
    """Empirical dissimilarity sqrt(max over the theta-ball of
    sum_k (validation loss - node-k loss)^2)."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    shards = {0: fed.validation, **{nd.node_id: nd for nd in fed.nodes}}

    def loss_at(theta, k):
        return empirical_loss(model, shards[k], theta)

    def grad_at(theta, k):
        return empirical_grad(model, shards[k], theta)

    return _metric_from_losses(loss_at, grad_at, fed.k, fed.dim, radius,
                               n_probe, starts, iters, seed)


def metric_G_population(truth: GroundTruth, radius: float,
                        n_probe: int = 1000, starts: int = 20,
                        iters: int = 300, seed: int = 0) -> float:
    """Population version of metric_G driven by the ground-truth losses."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    dim = (truth.theta_table.shape[1] if truth.is_closed_form
           else np.asarray(truth.theta_star).size)

    def loss_at(theta, k):
        return truth.population_loss(theta, k)

    def grad_at(theta, k):
        return truth.population_grad(theta, k)

    return _metric_from_losses(loss_at, grad_at, truth.n_nodes, dim, radius,
                               n_probe, starts, iters, seed)
