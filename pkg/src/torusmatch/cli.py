"""Command line interface: ``torusmatch {sample,solve,hopflax,wp,experiment}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from .fields import GridField, load_field, resample, save_field


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def cmd_sample(args) -> int:
    from .sampling import sample_uniform, write_cloud_csv

    cloud = sample_uniform(args.n, args.seed, args.tag, args.trial)
    fh = _open_out(args.out)
    try:
        write_cloud_csv(cloud, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_solve(args) -> int:
    from .qpoisson import QPoissonConvergenceError, QPoissonProblem, SolverOptions, solve_qpoisson

    rhs = load_field(args.rhs)
    if args.n_grid is not None and args.n_grid != rhs.resolution:
        rhs = resample(rhs, args.n_grid)
    r = rhs.values - rhs.values.mean()
    opts = SolverOptions(tol=args.tol, max_iter=args.max_iter)
    status = 0
    try:
        sol = solve_qpoisson(QPoissonProblem.from_p(GridField(r), args.p), opts)
    except QPoissonConvergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        sol = err.solution
        status = 2
    if args.out is not None and sol is not None:
        save_field(args.out, sol.phi)
    rec = {"energy": sol.energy, "residual_norm": sol.residual_norm,
           "iterations": sol.iterations, "epsilon_final": sol.epsilon_final}
    print(json.dumps(rec))
    return status


def cmd_hopflax(args) -> int:
    from .hopflax import lambda_curve, validate_restriction

    phi = load_field(args.field)
    if args.validate:
        diff = validate_restriction(phi, args.t, args.p)
        print(f"restricted vs full search at t={args.t}: max diff {diff:.3e}", file=sys.stderr)
        if diff != 0.0:
            return 2
    curve = lambda_curve(phi, args.p, args.c, args.n_times, t_max=args.t)
    fh = _open_out(args.out)
    try:
        fh.write("t,lambda,bound\n")
        for t, lam, b in zip(curve.times, curve.lambda_values, curve.bound):
            fh.write(f"{float(t)!r},{float(lam)!r},{float(b)!r}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _load_cloud(path):
    from .sampling import read_cloud_csv

    with open(path, newline="") as fh:
        return read_cloud_csv(fh)


def cmd_wp(args) -> int:
    from .wasserstein import wp_assignment, wp_grid

    t0 = time.perf_counter()
    if args.mode == "cloud":
        X, Y = _load_cloud(args.a), _load_cloud(args.b)
        res = wp_assignment(X, Y, args.p)
        size = X.n
    else:
        r0, r1 = load_field(args.a), load_field(args.b)
        mode = "entropic" if args.entropic else "exact_lp"
        res = wp_grid(r0, r1, args.p, mode=mode, epsilon=args.epsilon)
        size = r0.resolution
    ms = (time.perf_counter() - t0) * 1e3
    print(json.dumps({"cost_p": res.cost_p, "w_p": res.w_p, "method": res.method,
                      "n_or_grid": size, "runtime_ms": ms}))
    return 0


ASSERTIONS = ("coefficient", "gap", "concentration", "sandwich", "dominance")


def check_assertions(cfg, summary, names) -> list[str]:
    """Return a message for every failed assertion in ``names``."""
    failed = []
    by_n = sorted(summary, key=lambda s: s.n)
    for name in names:
        if name == "coefficient":
            target = 1.0 / (2.0 * math.pi)
            vals = [s.norm_wpp for s in by_n]
            dist = [abs(v - target) for v in vals]
            if cfg.p != 2.0:
                failed.append("coefficient: only defined for p = 2")
            elif not all(0.12 <= v <= 0.20 for v in vals):
                failed.append(f"coefficient: normalised costs {vals} outside [0.12, 0.20]")
            elif not all(b < a for a, b in zip(dist, dist[1:])):
                failed.append(f"coefficient: distances to 1/(2 pi) {dist} not decreasing in n")
        elif name == "gap":
            if len(by_n) < 2 or not by_n[-1].norm_gap < by_n[0].norm_gap:
                failed.append("gap: normalised gap at the largest n is not below the smallest n")
        elif name == "concentration":
            bad = [s.n for s in by_n if s.exceed_frac > 0.01]
            if bad:
                failed.append(f"concentration: exceedance above 1% at n = {bad}")
        elif name == "sandwich":
            v = sum(s.sandwich_violations for s in by_n)
            if v:
                failed.append(f"sandwich: {v} per-trial violations")
        elif name == "dominance":
            v = sum(s.dominance_violations for s in by_n)
            if v:
                failed.append(f"dominance: {v} per-trial violations")
        else:
            failed.append(f"unknown assertion {name!r}")
    return failed


def cmd_experiment(args) -> int:
    from .experiment import ExperimentConfig, ExperimentFailedError, load_config, run_experiment

    overrides = dict(p=args.p, n_values=tuple(args.n) if args.n else None, trials_per_n=args.trials,
                     beta=args.beta, grid_N=args.grid, root_seed=args.seed, workers=args.workers)
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = run_experiment(cfg, out / "trials.csv", out / "summary.json")
        summary = res.summary
    except ExperimentFailedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    for s in summary:
        print(f"n={s.n:6d}  norm_wpp={s.norm_wpp:.5f}  norm_energy={s.norm_energy:.5f}  "
              f"norm_gap={s.norm_gap:.5f}  failed={s.failed}")
    failures = check_assertions(cfg, summary, args.assert_ or [])
    for msg in failures:
        print(f"ASSERTION FAILED {msg}", file=sys.stderr)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torusmatch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw a uniform cloud and write it as CSV")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--tag", choices=("X", "Y"), default="X")
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--out", default=None, help="output file (default stdout)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("solve", help="solve the q-Poisson equation for a rhs field")
    s.add_argument("rhs", help="rhs field file (.csv or binary)")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--max-iter", type=int, default=5000)
    s.add_argument("--n-grid", type=int, default=None, help="resample the rhs to this resolution")
    s.add_argument("--out", default=None, help="phi output file")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("hopflax", help="energy curve of the Hopf-Lax semigroup")
    s.add_argument("field")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--t", type=float, default=1.0, help="final time of the curve")
    s.add_argument("--n-times", type=int, default=21)
    s.add_argument("--c", type=float, default=0.0)
    s.add_argument("--validate", action="store_true",
                   help="check the restricted search against the full one at the final time")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_hopflax)

    s = sub.add_parser("wp", help="exact Wasserstein cost between two clouds or two densities")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--mode", choices=("cloud", "grid"), default="cloud")
    s.add_argument("--p", type=float, required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--exact", action="store_true", default=True)
    g.add_argument("--entropic", action="store_true")
    s.add_argument("--epsilon", type=float, default=None)
    s.set_defaults(func=cmd_wp)

    s = sub.add_parser("experiment", help="Monte Carlo matching experiment")
    s.add_argument("--config", default=None, help="key = value config file")
    s.add_argument("--p", type=float)
    s.add_argument("--n", type=int, nargs="+")
    s.add_argument("--trials", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--grid", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--assert", dest="assert_", action="append", choices=ASSERTIONS,
                   help="enable an assertion; repeatable")
    s.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
