"""Command-line interface: ``sparsecv {gen,fit,cv,phase,bench,lambda-c}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
The worker count for seed fan-out is read from ``SPARSECV_WORKERS``.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .crossval import (approx_cv_path, approx_loo, detect_instability, kfold_cv, literal_loo,
                       normalized_mse, one_std_error_select, sturges_mode)
from .datagen import EnsembleParams, gen_instance, standardize
from .penalty import Kind, NumericalError, ParameterError, PenaltySpec
from .replica import a_imse_line, phase_boundaries
from .solver import (DEFAULT_DELTA, DEFAULT_MAX_SWEEPS, geometric_grid,
                     input_mse, lambda_grid, lambda_max, output_mse, solve_path)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def workers() -> int:
    raw = os.environ.get("SPARSECV_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SPARSECV_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def fan_out(fn, items):
    """map ``fn`` over ``items`` on a process pool; results in input order."""
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def float_list(s: str) -> list[float]:
    try:
        return [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def int_list(s: str) -> list[int]:
    try:
        return [int(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def parse_grid(spec: str | None, problem=None, top: float | None = None) -> np.ndarray:
    """``L:eps`` (geometric from ceil(lambda_max)), ``top:L:eps``, or an explicit list."""
    spec = spec or "100:0.01"
    parts = spec.split(":")
    try:
        if len(parts) == 2:
            L, eps = int(parts[0]), float(parts[1])
            if top is not None:
                return geometric_grid(top, L, eps)
            if problem is None:
                raise UsageError("an L:eps grid needs data or an explicit top (top:L:eps)")
            return lambda_grid(problem, L, eps)
        if len(parts) == 3:
            return geometric_grid(float(parts[0]), int(parts[1]), float(parts[2]))
        grid = np.array(sorted(float_list(spec), reverse=True))
    except (ValueError, argparse.ArgumentTypeError) as e:
        raise UsageError(f"bad --lambda-grid {spec!r}: {e}") from None
    if grid.size == 0 or np.any(np.diff(grid) >= 0) or np.any(grid < 0):
        raise UsageError("explicit lambda grid must contain distinct nonnegative values")
    return grid


def add_penalty(p):
    p.add_argument("--kind", default="scad", choices=["lasso", "scad", "mcp"])
    p.add_argument("--a", type=float_list, default=[3.0],
                   help="switching parameter(s), comma-separated")
    p.add_argument("--lambda-grid", default=None,
                   help="L:eps (default 100:0.01), top:L:eps, or comma-separated values")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--max-sweeps", type=int, default=DEFAULT_MAX_SWEEPS)
    p.add_argument("--seed", type=int, default=0, help="coordinate-order seed")


def add_data(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="directory written by 'gen'")
    g.add_argument("--csv", help="user CSV, one response column plus predictors")
    p.add_argument("--response", default="0", help="response column name or index (--csv)")
    p.add_argument("--no-standardize", action="store_true",
                   help="skip centring/scaling of --csv data")


def add_ensemble(p, N=True):
    if N:
        p.add_argument("--N", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--rho0", type=float, default=0.2)
    p.add_argument("--sigma-d2", type=float, default=0.1)
    p.add_argument("--sigma-x2", type=float, default=None, help="default 1/rho0")


def ensemble_of(args) -> EnsembleParams:
    return EnsembleParams(args.alpha, args.rho0, args.sigma_d2, args.sigma_x2)


def a_values(args, kind: Kind) -> list[float]:
    vals = args.a if kind is not Kind.LASSO else [math.inf]
    for a in vals:
        PenaltySpec(kind, 1.0, a)
    return vals


def load_problem(args):
    """(problem, transform or None, meta or None)."""
    if args.data:
        problem, meta = io.read_instance(args.data)
        return problem, None, meta
    problem, _ = io.read_design_csv(args.csv, args.response)
    if args.no_standardize:
        return problem, None, None
    problem, tr = standardize(problem)
    return problem, tr, None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _gen_one(job):
    N, ens, seed = job
    return gen_instance(N, ens, seed)


def cmd_gen(args) -> int:
    ens = ensemble_of(args)
    out = Path(args.out)
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    insts = fan_out(_gen_one, [(args.N, ens, s) for s in seeds])
    for inst in insts:
        d = out if args.n_seeds == 1 else out / f"seed_{inst.seed:06d}"
        io.write_instance(d, inst)
    print(f"wrote {len(insts)} instance(s) with M={insts[0].problem.M}, N={args.N} to {out}")
    return EXIT_OK


def _paths(problem, args, kind):
    grid = parse_grid(args.lambda_grid, problem)
    return grid, [solve_path(problem, a, kind, grid, args.delta, args.max_sweeps, args.seed)
                  for a in a_values(args, kind)]


def cmd_fit(args) -> int:
    problem, tr, meta = load_problem(args)
    kind = Kind.parse(args.kind)
    grid, paths = _paths(problem, args, kind)
    cols = ["a", "lambda", "K", "eps_y", "converged", "sweeps", "max_coord_delta"]
    has_x0 = problem.x0 is not None
    if has_x0:
        cols.append("eps_x")
    if args.coefficients:
        cols += [f"x{j}" for j in range(problem.N)]
    rows = []
    for path in paths:
        for lam, est in zip(path.lambdas, path.estimates):
            r = [path.spec_a, lam, est.K, output_mse(problem, est), est.converged,
                 est.iterations, est.max_coord_delta]
            if has_x0:
                r.append(input_mse(est, problem.x0))
            if args.coefficients:
                r += list(est.x_hat)
            rows.append(r)
    out = Path(args.out)
    io.write_table(out / "path.csv", "path", cols, rows)
    io.write_json(out / "path.json", {
        "kind": kind.name.lower(), "a": [p.spec_a for p in paths], "delta": args.delta,
        "max_sweeps": args.max_sweeps, "seed": args.seed, "M": problem.M, "N": problem.N,
        "standardize": tr.to_dict() if tr else None,
        "nonconverged": sum(not e.converged for p in paths for e in p.estimates),
    })
    print(f"wrote {len(rows)} path rows to {out / 'path.csv'}")
    return EXIT_OK


def cmd_cv(args) -> int:
    problem, tr, meta = load_problem(args)
    kind = Kind.parse(args.kind)
    if args.kfold is not None and not 2 <= args.kfold <= problem.M:
        raise ParameterError(f"--kfold must lie in [2, M={problem.M}]")
    grid, paths = _paths(problem, args, kind)
    curves = []
    rows = []
    literal = args.literal or args.kfold is not None
    cols = ["a", "lambda", "cv_error", "error_bar", "stable", "hessian_ok", "K"]
    if literal:
        cols += ["literal_cv", "literal_error_bar", "literal_converged"]
    for path in paths:
        curve = detect_instability(approx_cv_path(problem, path), args.k_detect, args.window,
                                   a=path.spec_a)
        curves.append(curve)
        for k, (p, ok) in enumerate(zip(curve.points, curve.stable_mask)):
            r = [path.spec_a, p.lam, p.epsilon_cv, p.error_bar, ok, p.hessian_ok, p.K]
            if literal:
                spec = path.spec_at(k)
                x = path.estimates[k].x_hat
                if args.kfold is not None:
                    lit = kfold_cv(problem, spec, args.kfold, args.seed, x, args.delta,
                                   args.max_sweeps, cd_seed=args.seed)
                else:
                    lit = literal_loo(problem, spec, x, args.delta, args.max_sweeps, args.seed)
                r += [lit.epsilon_cv, lit.error_bar, lit.converged]
            rows.append(r)
    out = Path(args.out)
    io.write_table(out / "cv.csv", "cv_curve", cols, rows)
    summary = {"kind": kind.name.lower(), "k_detect": args.k_detect, "window": args.window,
               "lambda_c": {str(c.a): c.lambda_c for c in curves},
               "standardize": tr.to_dict() if tr else None}
    if args.select == "one-std-error":
        sel = one_std_error_select(curves, paths)
        summary["selection"] = {"a": sel.a, "lambda": sel.lam, "K": sel.K, "cv": sel.cv,
                                "error_bar": sel.error_bar, "minimum": sel.minimum}
        print(f"selected a={sel.a:g} lambda={sel.lam:.6g} K={sel.K} cv={sel.cv:.6g}")
    io.write_json(out / "cv.json", summary)
    print(f"wrote {len(rows)} CV rows to {out / 'cv.csv'}")
    return EXIT_OK


def cmd_phase(args) -> int:
    kind = Kind.parse(args.kind)
    out = Path(args.out)
    if args.mode == "theory":
        return _phase_theory(args, kind, out)
    if not (args.data or args.csv):
        raise UsageError("empirical mode needs --data or --csv")
    problem, tr, meta = load_problem(args)
    grid, paths = _paths(problem, args, kind)
    rows, cve, lam_c = [], [], {}
    for path in paths:
        curve = detect_instability(approx_cv_path(problem, path), args.k_detect, args.window,
                                   a=path.spec_a)
        lam_c[str(path.spec_a)] = curve.lambda_c
        for p, ok in zip(curve.points, curve.stable_mask):
            rows.append([path.spec_a, p.lam, p.epsilon_cv, p.error_bar, ok, p.hessian_ok, p.K])
        vals = np.where(curve.stable_mask, curve.values, np.inf)
        if np.isfinite(vals).any():
            k = int(np.argmin(vals))
            cve.append([path.spec_a, curve.lambdas[k], vals[k], curve.points[k].K])
        else:
            cve.append([path.spec_a, None, None, None])
    io.write_table(out / "phase_empirical.csv", "phase_empirical",
                   ["a", "lambda", "cv_error", "error_bar", "stable", "hessian_ok", "K"], rows)
    io.write_table(out / "a_cve.csv", "a_cve", ["a", "lambda_cve", "cv_error", "K"], cve)
    io.write_json(out / "phase_empirical.json", {"lambda_c": lam_c, "kind": kind.name.lower()})
    print(f"wrote empirical phase diagram ({len(rows)} cells) to {out}")
    return EXIT_OK


def _phase_theory(args, kind, out) -> int:
    ens = ensemble_of(args)
    grid = parse_grid(args.lambda_grid or "10:31:0.001", top=None)
    avals = np.array(sorted(args.a))
    pd = phase_boundaries(ens, kind, grid, avals, rtol=args.rtol, refine=not args.coarse)
    rows = []
    for lam, a, s in pd.grid:
        o = s.observables
        rows.append([lam, a, s.status.value, s.at_lhs, o.get("eps_x"), o.get("eps_y"),
                     o.get("TP"), o.get("FP"), o.get("R"), o.get("rho_hat")])
    io.write_table(out / "phase_grid.csv", "phase_grid",
                   ["lambda", "a", "status", "at_lhs", "eps_x", "eps_y", "TP", "FP", "R",
                    "rho_hat"], rows)
    a_imse = a_imse_line(pd)
    io.write_table(out / "boundaries.csv", "phase_boundaries",
                   ["lambda", "a_AT", "a_RS", "a_IMSE"],
                   [[l, x, y, z] for l, x, y, z in zip(pd.lambdas, pd.a_at, pd.a_rs, a_imse)])
    io.write_table(out / "imse.csv", "imse_line", ["a", "lambda_imse", "eps_x"],
                   [[a, l, e] for a, l, e in zip(pd.a_values, pd.imse_lambda, pd.imse_eps)])
    io.write_json(out / "phase_theory.json", {
        "ensemble": {"alpha": ens.alpha, "rho0": ens.rho0, "sigma_D2": ens.sigma_D2,
                     "sigma_x2": ens.sigma_x2},
        "kind": kind.name.lower(), "global_min": pd.global_min,
        "lasso_limit_minimum": pd.lasso_limit_minimum})
    if pd.global_min:
        g = pd.global_min
        print(f"global eps_x minimum {g['eps_x']:.6g} at a={g['a']:.4g}, "
              f"lambda={g['lambda']:.4g} (AT-stable: {g['at_stable']})")
    if pd.lasso_limit_minimum:
        print("eps_x still decreasing at the largest a: minimum in the LASSO limit")
    print(f"wrote theoretical phase diagram to {out}")
    return EXIT_OK


def bench_sample(job):
    """One (N, seed) benchmark sample: anneal to lam, then approximate and literal CV."""
    N, ens, seed, kind, a, lam, kfold_from, delta, max_sweeps = job
    problem = gen_instance(N, ens, seed).problem
    spec = PenaltySpec(kind, lam, a)
    t0 = time.perf_counter()
    top = float(math.ceil(lambda_max(problem)))
    grid = annealing_grid(top, lam)
    path = solve_path(problem, a, kind, grid, delta, max_sweeps, seed)
    est = path.estimates[-1]
    t1 = time.perf_counter()
    ap = approx_loo(problem, est, spec)
    t2 = time.perf_counter()
    if kfold_from and N >= kfold_from:
        lit = kfold_cv(problem, spec, 10, seed, est.x_hat, delta, max_sweeps, cd_seed=seed)
    else:
        lit = literal_loo(problem, spec, est.x_hat, delta, max_sweeps, seed)
    t3 = time.perf_counter()
    return (N, seed, normalized_mse(ap.epsilon_cv, lit.epsilon_cv), t1 - t0, t2 - t1, t3 - t2,
            ap.epsilon_cv, lit.epsilon_cv, ap.hessian_ok)


def annealing_grid(top: float, lam: float, ratio: float = 1.05) -> np.ndarray:
    """Geometric grid from top down to lam (inclusive) with step ratio about 1/ratio."""
    if top <= lam:
        return np.array([lam])
    L = int(math.ceil(math.log(top / lam) / math.log(ratio))) + 1
    return np.geomspace(top, lam, max(L, 2))


def cmd_bench(args) -> int:
    ens = ensemble_of(args)
    kind = Kind.parse(args.kind)
    a = a_values(args, kind)[0]
    jobs = [(N, ens, args.seed + s, kind, a, args.lam, args.kfold_from, args.delta,
             args.max_sweeps) for N in args.sizes for s in range(args.n_samples)]
    res = sorted(fan_out(bench_sample, jobs), key=lambda r: (r[0], r[1]))
    out = Path(args.out)
    io.write_table(out / "bench_samples.csv", "bench_samples",
                   ["N", "seed", "normalized_mse", "t_cd", "t_approx", "t_literal",
                    "approx_cv", "literal_cv", "hessian_ok"], res)
    rows = []
    for N in args.sizes:
        sub = [r for r in res if r[0] == N]
        nm = np.array([r[2] for r in sub])
        rows.append([N, len(sub), float(np.median(nm)), float(np.quantile(nm, 0.14)),
                     float(np.quantile(nm, 0.86)),
                     float(np.median([r[3] for r in sub])), float(np.median([r[4] for r in sub])),
                     float(np.median([r[5] for r in sub]))])
    io.write_table(out / "bench.csv", "bench",
                   ["N", "samples", "nmse_median", "nmse_q14", "nmse_q86", "t_cd_median",
                    "t_approx_median", "t_literal_median"], rows)
    for r in rows:
        print(f"N={r[0]:5d}  median nMSE={r[2]:.3e}  [{r[3]:.2e}, {r[4]:.2e}]  "
              f"cd={r[5]:.3f}s approx={r[6]:.4f}s literal={r[7]:.3f}s")
    return EXIT_OK


def cmd_lambda_c(args) -> int:
    """Detected lambda_c over many synthetic samples, with Sturges-binned mode."""
    ens = ensemble_of(args)
    kind = Kind.parse(args.kind)
    a = a_values(args, kind)[0]
    rows = []
    for N in args.sizes:
        jobs = [(N, ens, args.seed + s, kind, a, args.lambda_grid, args.k_detect, args.window,
                 args.delta, args.max_sweeps) for s in range(args.n_samples)]
        for seed, lc in fan_out(lambda_c_sample, jobs):
            rows.append([N, seed, lc])
    out = Path(args.out)
    io.write_table(out / "lambda_c.csv", "lambda_c", ["N", "seed", "lambda_c"], rows)
    modes = {}
    for N in args.sizes:
        vals = [r[2] for r in rows if r[0] == N]
        mode, _, _ = sturges_mode(vals, len(vals))
        modes[N] = mode
        print(f"N={N}: mode of lambda_c = {mode:.4g}")
    io.write_json(out / "lambda_c.json", {"mode": modes})
    return EXIT_OK


def lambda_c_sample(job):
    N, ens, seed, kind, a, grid_spec, k_detect, window, delta, max_sweeps = job
    problem = gen_instance(N, ens, seed).problem
    grid = parse_grid(grid_spec, problem)
    path = solve_path(problem, a, kind, grid, delta, max_sweeps, seed)
    curve = detect_instability(approx_cv_path(problem, path), k_detect, window, a=a)
    return seed, curve.lambda_c


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sparsecv", description="Sparse regression with nonconvex penalties, "
                "approximate cross-validation and replica phase diagrams.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic Bernoulli-Gauss instances")
    add_ensemble(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-seeds", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="lambda-annealed solution path(s)")
    add_data(f)
    add_penalty(f)
    f.add_argument("--coefficients", action="store_true", help="include x_hat columns")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("cv", help="approximate CV with instability detection")
    add_data(c)
    add_penalty(c)
    c.add_argument("--literal", action="store_true", help="add literal LOO columns")
    c.add_argument("--kfold", type=int, default=None, help="literal k-fold instead of LOO")
    c.add_argument("--k-detect", type=float, default=3.0)
    c.add_argument("--window", type=int, default=2)
    c.add_argument("--select", choices=["none", "one-std-error"], default="none")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cv)

    ph = sub.add_parser("phase", help="phase diagrams (empirical or replica theory)")
    ph.add_argument("--mode", choices=["empirical", "theory"], required=True)
    d = ph.add_mutually_exclusive_group()
    d.add_argument("--data")
    d.add_argument("--csv")
    ph.add_argument("--response", default="0")
    ph.add_argument("--no-standardize", action="store_true")
    add_penalty(ph)
    add_ensemble(ph, N=False)
    ph.add_argument("--k-detect", type=float, default=3.0)
    ph.add_argument("--window", type=int, default=2)
    ph.add_argument("--rtol", type=float, default=1e-4, help="boundary bisection tolerance")
    ph.add_argument("--coarse", action="store_true", help="grid resolution only, no bisection")
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=cmd_phase)

    b = sub.add_parser("bench", help="approximate vs literal CV accuracy and timing")
    add_ensemble(b, N=False)
    add_penalty(b)
    b.set_defaults(a=[4.0])
    b.add_argument("--sizes", type=int_list, default=[50, 100, 200])
    b.add_argument("--n-samples", type=int, default=20)
    b.add_argument("--lam", type=float, default=1.0)
    b.add_argument("--kfold-from", type=int, default=None,
                   help="use 10-fold CV instead of LOO for N at or above this size")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    lc = sub.add_parser("lambda-c", help="distribution of the detected instability point")
    add_ensemble(lc, N=False)
    add_penalty(lc)
    lc.set_defaults(a=[5.0])
    lc.add_argument("--sizes", type=int_list, default=[100, 400])
    lc.add_argument("--n-samples", type=int, default=100)
    lc.add_argument("--k-detect", type=float, default=3.0)
    lc.add_argument("--window", type=int, default=2)
    lc.add_argument("--out", required=True)
    lc.set_defaults(func=cmd_lambda_c)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, OSError) as e:
        print(f"sparsecv: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"sparsecv: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
