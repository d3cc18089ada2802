"""Experiment driver: config in, solver run, artifacts out.

Artifacts per run: telemetry.csv (one row per outer round plus a final
row; fixed column set, 17 significant digits, no wall-clock fields so
reruns are byte-identical), weights.csv (the weight trajectory),
events.jsonl (telemetry mirrored as JSON objects, wall_time allowed
here), and summary.json (final metrics plus the resolved config, which
replays to identical telemetry).
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import resolve
from .data import FederatedDataset, WeightVector
from .datagen import TaskData, TaskSpec, generate
from .errors import ConfigError
from .baselines import fedavg_train, local_train
from .hypergrad import dense_hypergrad_oracle, solve_inner_dense, approx_hypergrad
from .losses import (LossModel, QuadraticRegressionLoss, RegularizedLogisticLoss,
                     empirical_loss)
from .metrics import GroundTruth, dist_to_Wstar, generalization_gap
from .network import FederatedNetwork
from .outer import OuterConfig, OuterTrace, solve_convex, solve_nonconvex, _Setup
from .simplex import project
from .svrg import SvrgConfig

__all__ = ["ExperimentResult", "run_id_of", "build_model", "build_outer_config",
           "run_experiment", "check_hypergrad", "TELEMETRY_PREFIX"]

# w_0..w_{K-1} columns follow these
TELEMETRY_PREFIX = ("run_id", "s", "comm_rounds", "scalars_sent", "wall_ops",
                    "gamma", "inner_iters", "f_hat", "stationarity",
                    "inner_residual", "qp_residual", "test_loss",
                    "test_accuracy", "gen_gap", "gen_gap_se", "dist_w")


@dataclass
class ExperimentResult:
    run_id: str
    config: dict
    summary: dict
    telemetry: list[dict] = field(default_factory=list)
    out_dir: Optional[Path] = None
    trace: Optional[OuterTrace] = None


def run_id_of(resolved: dict) -> str:
    """Deterministic 12-hex id of everything that shapes the numbers.

    The [output] section is excluded so moving a run to a different
    directory keeps its identity.
    """
    hashed = {k: v for k, v in resolved.items() if k != "output"}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def build_task(resolved: dict) -> tuple[TaskSpec, TaskData, GroundTruth]:
    t = resolved["task"]
    spec = TaskSpec(
        kind=t["kind"], n_nodes=t["nodes"], n_train=t["n_train"],
        n_valid=t["n_valid"], n_test=t["n_test"], seed=resolved["seed"],
        n_similar=t["similar"], shift=t["shift"], dim=t["dim"],
        noise_std=t["noise_std"], theta_scale=t["theta_scale"],
        class_sep=t["class_sep"], prior_similar=t["prior_similar"],
        prior_other=t["prior_other"], flip_labels=t["flip_labels"],
        rotate=t["rotate"], ridge=t["ridge"], mc_samples=t["mc_samples"])
    data, truth = generate(spec)
    return spec, data, truth


def build_model(resolved: dict) -> LossModel:
    loss = resolved["task"]["loss"]
    ridge = float(resolved["task"]["ridge"])
    if loss == "logistic":
        return RegularizedLogisticLoss(ridge)
    return QuadraticRegressionLoss(ridge)


def _auto(v):
    return None if v == "auto" else v


def build_outer_config(resolved: dict, fed: FederatedDataset) -> OuterConfig:
    inner, outer = resolved["inner"], resolved["outer"]
    iters = _auto(inner["iters"])
    if iters is None and inner["schedule"] == "fixed":
        mean_n = sum(fed.n_per_node) / fed.k
        iters = max(1, int(round(inner["epochs"] * mean_n)))
    return OuterConfig(
        rounds=outer["rounds"], cap=float(outer["cap"]), period=inner["tau"],
        refresh_prob=float(inner["q"]), schedule=inner["schedule"],
        gamma=_auto(inner["gamma"]), inner_iters=iters,
        eta=_auto(outer["eta"]), a1=float(outer["a1"]), a2=float(outer["a2"]),
        a3=float(outer["a3"]), radius=_auto(outer["radius"]),
        warm_start=outer["warm_start"])


def _static_weights(resolved: dict, k: int) -> WeightVector:
    cap = float(resolved["outer"]["cap"])
    if resolved["outer"]["solver"] == "static-w":
        w = np.asarray([float(x) for x in resolved["outer"]["weights"]], dtype=float)
        return WeightVector(np.asarray(project(w, cap).weights), cap)
    return WeightVector.uniform(k, cap)


class _MetricPack:
    """Shared per-row metric evaluation; anything not requested or not
    defined for the solver comes out as nan."""

    def __init__(self, resolved, model, data: TaskData, truth: GroundTruth):
        self.compute = set(resolved["metrics"]["compute"])
        self.model = model
        self.data = data
        self.truth = truth
        self.cap = float(resolved["outer"]["cap"])
        self.classify = isinstance(model, RegularizedLogisticLoss)

    def row(self, theta, w, f_hat, stat) -> dict:
        out = {"f_hat": f_hat, "stationarity": stat,
               "test_loss": math.nan, "test_accuracy": math.nan,
               "gen_gap": math.nan, "gen_gap_se": math.nan,
               "dist_w": math.nan}
        test = self.data.test
        if "test" in self.compute and test is not None:
            out["test_loss"] = empirical_loss(self.model, test, theta)
            if self.classify:
                pred = self.model.predict(theta, test.features)
                out["test_accuracy"] = float(np.mean(pred == test.targets))
        if "gap" in self.compute:
            try:
                gap = generalization_gap(self.truth, theta)
                out["gen_gap"], out["gen_gap_se"] = gap.value, gap.std_error
            except ValueError:
                pass
        if "dist" in self.compute and w is not None and self.truth.similar_nodes:
            out["dist_w"] = dist_to_Wstar(w, self.truth, self.cap)
        return out


def run_experiment(cfg: dict, out_dir=None, quiet: bool = True) -> ExperimentResult:
    """Run one experiment described by a (raw or resolved) config dict."""
    resolved = resolve(cfg)
    rid = run_id_of(resolved)
    solver = resolved["outer"]["solver"]
    t_start = time.time()

    spec, data, truth = build_task(resolved)
    fed = data.fed
    model = build_model(resolved)
    pack = _MetricPack(resolved, model, data, truth)
    # local training touches only the center's shard: a one-node network
    net = FederatedNetwork(resolved["seed"], 1 if solver == "local" else fed.k)
    k = fed.k

    if solver in ("bilevel-convex", "bilevel-nonconvex"):
        rows, w_final, theta_final, trace = _run_bilevel(
            resolved, model, fed, net, pack, solver)
    else:
        rows, w_final, theta_final, trace = _run_frozen(
            resolved, model, fed, net, pack, solver)

    final = dict(rows[-1])
    summary = {
        "run_id": rid,
        "solver": solver,
        "seed": resolved["seed"],
        "n_nodes": k,
        "dim": fed.dim,
        "final": {key: final[key] for key in
                  ("f_hat", "stationarity", "test_loss", "test_accuracy",
                   "gen_gap", "gen_gap_se", "dist_w")},
        "ledger": net.ledger.snapshot(),
        "weights": [None] * k if w_final is None else
                   [float(x) for x in np.asarray(w_final)],
        "theta": [float(x) for x in theta_final],
        "config": resolved,
        "wall_time_s": time.time() - t_start,
    }
    if trace is not None:
        summary["eta"] = trace.eta
        summary["l0_estimate"] = trace.l0_estimate
        if trace.selected_index is not None:
            summary["selected_index"] = trace.selected_index
    if w_final is not None:
        summary["max_dev_uniform"] = float(
            np.max(np.abs(np.asarray(w_final) - 1.0 / k)))

    result = ExperimentResult(run_id=rid, config=resolved, summary=summary,
                              telemetry=rows, trace=trace)
    target = out_dir if out_dir is not None else resolved["output"]["dir"]
    if target is not None:
        result.out_dir = _write_artifacts(Path(target), rid, resolved, rows,
                                          summary, k)
    if not quiet:
        print(f"{rid} {solver} f_hat={final['f_hat']:.6g} "
              f"rounds={summary['ledger']['comm_rounds']}")
    return result


def _row_base(rid, s, ledger, gamma, iters, w, k) -> dict:
    row = {"run_id": rid, "s": s,
           "comm_rounds": ledger["comm_rounds"],
           "scalars_sent": ledger["scalars_sent"],
           "wall_ops": ledger["wall_ops"],
           "gamma": gamma, "inner_iters": iters}
    wv = [math.nan] * k if w is None else [float(x) for x in np.asarray(w)]
    row.update({f"w_{i}": wv[i] for i in range(k)})
    return row


def _run_bilevel(resolved, model, fed, net, pack, solver):
    ocfg = build_outer_config(resolved, fed)
    w0 = WeightVector.uniform(fed.k, ocfg.cap)
    solve = solve_convex if solver == "bilevel-convex" else solve_nonconvex
    w_out, trace = solve(model, fed, w0, ocfg, net)
    rid = run_id_of(resolved)

    rows = []
    for r in trace.rows:
        row = _row_base(rid, r.s, r.ledger, r.gamma, r.inner_iters,
                        r.w_after, fed.k)
        row.update(pack.row(r.theta, r.w_after, r.f_hat, r.stationarity))
        row["inner_residual"] = r.inner_residual
        row["qp_residual"] = r.qp_residual
        rows.append(row)

    # final record reuses the round where the returned candidate was probed;
    # no extra solve, so the ledger stays on the analytic round count
    src = trace.rows[trace.selected_index if trace.selected_index is not None
                     else -1]
    w_final = np.asarray(w_out)
    row = _row_base(rid, len(trace.rows), net.ledger.snapshot(),
                    src.gamma, src.inner_iters, w_final, fed.k)
    row.update(pack.row(src.theta, w_final,
                        empirical_loss(model, fed.validation, src.theta),
                        src.stationarity))
    row["inner_residual"] = src.inner_residual
    row["qp_residual"] = src.qp_residual
    rows.append(row)
    return rows, w_final, src.theta, trace


def _run_frozen(resolved, model, fed, net, pack, solver):
    """fedavg / static-w / local: S restarted training legs at frozen
    weights, telemetry after each leg."""
    ocfg = build_outer_config(resolved, fed)
    setup = _Setup(model, fed, ocfg)
    rid = run_id_of(resolved)
    w = None if solver == "local" else _static_weights(resolved, fed.k)

    theta = np.zeros(fed.dim)
    rows = []
    for s in range(ocfg.rounds):
        budget = setup.round_budget(s)
        if solver == "local":
            out = local_train(model, fed.validation, budget, net=net,
                              x0=theta)
        else:
            out = fedavg_train(model, fed, budget, net, w=w, x0=theta)
        theta = out.x_avg
        row = _row_base(rid, s, net.ledger.snapshot(), budget.step,
                        budget.iters, w, fed.k)
        row.update(pack.row(theta, w, empirical_loss(model, fed.validation, theta),
                            math.nan))
        row["inner_residual"] = math.nan
        row["qp_residual"] = math.nan
        rows.append(row)
    rows.append(dict(rows[-1], s=ocfg.rounds))
    w_final = None if w is None else np.asarray(w)
    return rows, w_final, theta, None


def _json_safe(obj):
    """Recursively replace non-finite floats with None (JSON has no nan)."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def _write_artifacts(out_dir: Path, rid: str, resolved, rows, summary,
                     k: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = list(TELEMETRY_PREFIX) + [f"w_{i}" for i in range(k)]
    with open(out_dir / "telemetry.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    with open(out_dir / "weights.csv", "w") as fh:
        fh.write(",".join(f"w_{i}" for i in range(k)) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[f"w_{i}"]) for i in range(k)) + "\n")
    with open(out_dir / "events.jsonl", "w") as fh:
        for row in rows:
            event = _json_safe(dict(row, event="round", wall_time=time.time()))
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        fh.write(json.dumps(_json_safe(dict(summary, event="summary")),
                            sort_keys=True) + "\n")
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def check_hypergrad(cfg: dict, n_probes: int = 10, fd_eps: float = 1e-6,
                    quiet: bool = True) -> dict:
    """Three-way gradient cross-check at random feasible weights.

    Routes: the communication-pattern estimator, the dense implicit
    oracle, and central finite differences of the validation objective
    along simplex-tangent directions.  Reports the max pairwise relative
    error; the caller decides what to do with it.
    """
    resolved = resolve(cfg)
    spec, data, truth = build_task(resolved)
    fed = data.fed
    if fed.dim > 200:
        raise ConfigError(
            f"dense oracle needs dim <= 200, task has dim {fed.dim}")
    model = build_model(resolved)
    ocfg = build_outer_config(resolved, fed)
    setup = _Setup(model, fed, ocfg)
    budget = setup.round_budget(0)
    cap = ocfg.cap
    k = fed.k
    net = FederatedNetwork(resolved["seed"], k)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(resolved["seed"], spawn_key=(5, 0))))

    # tangent basis of the sum-to-one hyperplane
    basis = []
    for i in range(k - 1):
        u = np.zeros(k)
        u[i], u[-1] = 1.0, -1.0
        basis.append(u / np.sqrt(2.0))

    uni = np.full(k, 1.0 / k)
    if cap - 1.0 / k < 4 * fd_eps:
        raise ConfigError(
            f"cap {cap} leaves no interior around uniform weights at "
            f"K={k}; finite differences need strictly feasible probes")
    probes = []
    for _ in range(n_probes):
        w = np.asarray(project(rng.dirichlet(np.ones(k)), cap).weights)
        # pull strictly inside the box so central differences stay feasible
        while np.min(w) < 2 * fd_eps or np.max(w) > cap - 2 * fd_eps:
            w = 0.7 * w + 0.3 * uni
        probes.append(w)

    def f_hat(wv):
        theta = solve_inner_dense(model, fed, WeightVector(wv, cap))
        return empirical_loss(model, fed.validation, theta)

    report_rows = []
    worst = 0.0
    for idx, w in enumerate(probes):
        wv = WeightVector(w, cap)
        approx = approx_hypergrad(model, fed, wv, budget, budget, net).grad
        exact = dense_hypergrad_oracle(model, fed, wv).grad
        fd = np.array([(f_hat(w + fd_eps * u) - f_hat(w - fd_eps * u))
                       / (2 * fd_eps) for u in basis])
        tang = {
            "approx": np.array([u @ approx for u in basis]),
            "oracle": np.array([u @ exact for u in basis]),
            "fd": fd,
        }
        scale = max(float(np.linalg.norm(tang["oracle"])), 1e-12)
        errs = {
            "approx_vs_oracle": float(np.linalg.norm(
                tang["approx"] - tang["oracle"]) / scale),
            "oracle_vs_fd": float(np.linalg.norm(
                tang["oracle"] - tang["fd"]) / scale),
            "approx_vs_fd": float(np.linalg.norm(
                tang["approx"] - tang["fd"]) / scale),
        }
        worst = max(worst, *errs.values())
        report_rows.append({"probe": idx, "w": [float(x) for x in w], **errs})
        if not quiet:
            print(f"probe {idx}: " + "  ".join(
                f"{name}={val:.3e}" for name, val in errs.items()))

    report = {"max_rel_err": worst, "rows": report_rows,
              "threshold": 1e-2, "ok": bool(worst <= 1e-2)}
    if not quiet:
        state = "OK" if report["ok"] else "FAIL"
        print(f"max relative error {worst:.3e} ({state})")
    return report
