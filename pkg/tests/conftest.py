"""Shared oracles and builders.

Everything here is deliberately independent of the library internals:
the projection oracle enumerates KKT patterns, gradients come from
central differences, and dense solves use plain numpy.
"""
import itertools

import numpy as np
import pytest

from fedbl import FederatedDataset, NodeDataset


def enumerate_projection(v, cap):
    """Projection onto {w: sum w = 1, 0 <= w <= cap} by brute-force
    enumeration of every lower/free/upper active-set pattern."""
    v = np.asarray(v, dtype=float)
    k = v.size
    tol = 1e-9
    for pattern in itertools.product((0, 1, 2), repeat=k):
        lo = [i for i in range(k) if pattern[i] == 0]
        free = [i for i in range(k) if pattern[i] == 1]
        hi = [i for i in range(k) if pattern[i] == 2]
        if free:
            lam = (v[free].sum() + cap * len(hi) - 1.0) / len(free)
        else:
            if abs(cap * len(hi) - 1.0) > tol:
                continue
            lo_max = max((v[i] for i in lo), default=-np.inf)
            hi_min = min((v[i] - cap for i in hi), default=np.inf)
            if lo_max > hi_min + tol:
                continue
            lam = (max(lo_max, hi_min - 1.0) + min(hi_min, lo_max + 1.0)) / 2.0
        w = np.empty(k)
        w[lo] = 0.0
        w[hi] = cap
        ok = True
        for i in free:
            w[i] = v[i] - lam
            if w[i] < -tol or w[i] > cap + tol:
                ok = False
                break
        if not ok:
            continue
        if any(v[i] - lam > tol for i in lo):
            continue
        if any(v[i] - lam < cap - tol for i in hi):
            continue
        return np.clip(w, 0.0, cap)
    raise AssertionError(f"no KKT pattern found for v={v}, cap={cap}")


def fd_grad(f, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2.0 * eps)
    return g


def make_fed(rng, k=3, n=8, d=2, noise=0.1, theta=None, same_theta=False):
    """Small quadratic-regression dataset; node targets follow per-node
    linear models unless same_theta pins them all to one vector."""
    if theta is None:
        theta = rng.standard_normal(d)
    shards = []
    for node_id in range(k + 1):
        t = theta if (same_theta or node_id == 0) else rng.standard_normal(d)
        X = rng.standard_normal((n, d))
        y = X @ t + noise * rng.standard_normal(n)
        shards.append(NodeDataset(node_id, X, y))
    return FederatedDataset(validation=shards[0], nodes=tuple(shards[1:]))


def exact_moment_features(n_pairs, d, scale=1.0):
    """Feature matrix whose empirical second moment is exactly
    scale^2 * I: paired +/- axis points, sqrt(d)-scaled."""
    rows = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = scale * np.sqrt(d)
        for _ in range(n_pairs):
            rows.append(e.copy())
            rows.append(-e)
    return np.asarray(rows)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
