"""Command-line entry point.

Subcommands: run (one experiment), check-hypergrad (gradient
cross-check), gen-data (write the synthetic task to CSV), project
(projection REPL on stdin).  Config errors exit with status 2 and a
message naming the offending key; a failed gradient check exits 1.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import SOLVERS, load_toml, resolve
from .data import write_csv, write_shards_csv
from .errors import ConfigError, DivergenceError
from .experiment import build_task, check_hypergrad, run_experiment
from .simplex import project as project_onto

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fedbl",
        description="Federated training with adaptively weighted nodes.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, solver=True):
        sp.add_argument("--config", type=Path, required=True,
                        help="TOML experiment config")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed (unsigned 64-bit)")
        sp.add_argument("--quiet", action="store_true")
        if solver:
            sp.add_argument("--solver", choices=SOLVERS, default=None,
                            help="override [outer] solver")

    sp = sub.add_parser("run", help="run one experiment and write artifacts")
    common(sp)
    sp.add_argument("--out-dir", type=Path, default=None,
                    help="override [output] dir")

    sp = sub.add_parser("check-hypergrad",
                        help="compare the gradient estimator against the "
                             "dense oracle and finite differences")
    common(sp)

    sp = sub.add_parser("gen-data", help="write the task dataset to CSV")
    common(sp, solver=False)
    sp.add_argument("--out", type=Path, required=True,
                    help="training CSV path; a test split, if configured, "
                         "goes next to it with a .test.csv suffix")

    sp = sub.add_parser("project",
                        help="read one vector per stdin line, print its "
                             "projection onto the capped simplex")
    sp.add_argument("--cap", type=float, default=1.0,
                    help="per-coordinate cap b (default 1 = plain simplex)")
    return p


def _load_config(args) -> dict:
    cfg = load_toml(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "solver", None) is not None:
        cfg.setdefault("outer", {})["solver"] = args.solver
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg, out_dir=args.out_dir, quiet=args.quiet)
    if not args.quiet:
        print(json.dumps(result.summary["final"], sort_keys=True))
        print(f"artifacts in {result.out_dir}")
    return 0


def _cmd_check(args) -> int:
    report = check_hypergrad(_load_config(args), quiet=args.quiet)
    if args.quiet:
        print("%.6e" % report["max_rel_err"])
    return 0 if report["ok"] else 1


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    spec, data, _ = build_task(resolve(cfg))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(args.out, data.fed)
    wrote = [str(args.out)]
    if data.test is not None:
        test_path = args.out.with_suffix(".test.csv")
        write_shards_csv(test_path, [data.test])
        wrote.append(str(test_path))
    if not args.quiet:
        for path in wrote:
            print(path)
    return 0


def _cmd_project(args) -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        v = np.asarray([float(tok) for tok in line.replace(",", " ").split()])
        res = project_onto(v, args.cap)
        print(" ".join("%.17g" % x for x in np.asarray(res.weights)))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "check-hypergrad": _cmd_check,
               "gen-data": _cmd_gen_data, "project": _cmd_project}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
