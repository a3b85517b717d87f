"""Command-line front end: ``heatkron {cond-table,solve,scaling,precond,verify}``.

Every command writes CSV (header first, floats with 6 significant digits)
to ``--output`` (``-`` for stdout).  Exit status: 0 success, 1 failed
check, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HeatKronError
from .krylov_preconditioning import GEOMETRIES, l2_error, manufactured_problem, solve_preconditioned, write_history_csv
from .problems import dense_system, fd_problem, galerkin_problem, time_matrices
from .spacetime_solvers import METHODS, apply, plan, residual, time_basis
from .spline_discretization import TimePartition
from .tensor_core import cond2, count_flops
from .verification import run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ORACLE_MAX_N = 4096


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def int_list(text: str) -> list[int]:
    """``"1,2,8"`` or ``"1-5"`` (inclusive) or a mix of both."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty integer list {text!r}")
    return out


def method_list(text: str) -> list[str]:
    methods = [m.strip().upper() for m in str(text).split(",") if m.strip()]
    if not methods:
        raise argparse.ArgumentTypeError("empty method set")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {[m.lower() for m in METHODS]}")
    return methods


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("_", "-")] = v
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else "nan" if math.isnan(v) else f"{v:.5e}"
    return "" if v is None else str(v)


@contextlib.contextmanager
def _open_output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def write_csv(path, header, rows) -> None:
    with _open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_cond_table(args) -> int:
    rows = []
    for p_t in args.pt:
        for n_t in args.nt:
            A_t, M_t, _ = time_matrices(p_t, n_t)
            try:
                kappa = cond2(time_basis(args.mode, A_t, M_t))
            except HeatKronError:
                kappa = math.inf
            rows.append({"N_t": n_t, "p_t": p_t, "kappa2": kappa})
    write_csv(args.output, ["N_t", "p_t", "kappa2"], rows)
    return EXIT_OK


def _build_problem(args):
    if args.time == "galerkin":
        prob = galerkin_problem(args.dim, args.ps[0], args.ns[0], args.nt[0], p_t=args.pt[0] if args.pt else None)
    else:
        n_t = args.nt[0]
        part = (TimePartition.uniform(1.0, n_t) if args.time == "fd-uniform"
                else TimePartition.geometric(1.0, n_t, args.beta))
        prob = fd_problem(part, args.ns[0], seed=args.seed)
    return prob


def cmd_solve(args) -> int:
    prob = _build_problem(args)
    f = prob.rhs
    oracle = None
    if f.size <= ORACLE_MAX_N:
        oracle = np.linalg.solve(dense_system(prob), f)
    sd = prob.diagonalize_space()
    rows, sols = [], {}
    for m in args.methods:
        row = {"method": m.lower(), "N": f.size, "N_t": prob.n_t, "N_s": prob.n_s}
        try:
            with count_flops() as c:
                t0 = time.perf_counter()
                p = plan(m, prob.A_t, prob.M_t, sd, rank=args.rank)
                t1 = time.perf_counter()
                u = apply(p, f)
                t2 = time.perf_counter()
        except HeatKronError as exc:
            row["error"] = _error_label(exc)
            rows.append(row)
            continue
        sols[m] = u
        row.update(setup_s=t1 - t0, apply_s=t2 - t1,
                   residual=residual(prob.A_t, prob.M_t, prob.space, u, f))
        if oracle is not None:
            row["oracle_err"] = float(np.linalg.norm(u - oracle) / np.linalg.norm(oracle))
        if args.instrument:
            row.update(flops_setup=c["setup"], flops_block_solve=c["block_solve"], flops_transform=c["transform"])
        rows.append(row)
    cross = 0.0
    keys = list(sols)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            cross = max(cross, float(np.linalg.norm(sols[a] - sols[b]) / np.linalg.norm(sols[b])))
    for r in rows:
        if r["method"].upper() in sols:
            r["cross_diff"] = cross
    header = ["method", "N", "N_t", "N_s", "setup_s", "apply_s", "residual", "oracle_err", "cross_diff"]
    if args.instrument:
        header += ["flops_setup", "flops_block_solve", "flops_transform"]
    header.append("error")
    write_csv(args.output, header, rows)
    if len(sols) > 1 and cross > args.check_tol:
        _log(f"cross-method difference {cross:.3e} exceeds {args.check_tol:.1e}")
        return EXIT_FAIL
    return EXIT_OK


def _error_label(exc: Exception) -> str:
    name = type(exc).__name__
    if name == "DefectivePencilError":
        return "defective pencil"
    return f"{name}: {exc}"


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def cmd_scaling(args) -> int:
    """Size ladder: vary space elements (``--vary space``) or time elements."""
    ladder = args.ns if args.vary == "space" else args.nt
    if len(ladder) < 4:
        raise UsageError("scaling needs a ladder of at least 4 sizes")
    rows = []
    for m in args.methods:
        for n in ladder:
            n_s, n_t = (n, args.nt[0]) if args.vary == "space" else (args.ns[0], n)
            prob = galerkin_problem(args.dim, args.ps[0], n_s, n_t, p_t=args.pt[0] if args.pt else None)
            sd = prob.diagonalize_space()
            with count_flops() as c:
                t0 = time.perf_counter()
                p = plan(m, prob.A_t, prob.M_t, sd, rank=args.rank)
                t1 = time.perf_counter()
                apply(p, prob.rhs)
                t2 = time.perf_counter()
            rows.append({"method": m.lower(), "N": prob.rhs.size, "N_t": prob.n_t, "N_s": prob.n_s,
                         "setup_s": t1 - t0, "apply_s": t2 - t1, "flops_setup": c["setup"],
                         "flops_setup_time": c["setup_time"], "flops_block_solve": c["block_solve"],
                         "flops_transform": c["transform"]})
    header = ["method", "N", "N_t", "N_s", "setup_s", "apply_s", "flops_setup",
              "flops_setup_time", "flops_block_solve", "flops_transform"]
    write_csv(args.output, header, rows)
    for m in args.methods:
        sel = [r for r in rows if r["method"] == m.lower()]
        N = [r["N"] for r in sel]
        _log(f"{m.lower()}: slope(block_solve) {loglog_slope(N, [r['flops_block_solve'] for r in sel]):.3f}"
             f"  slope(apply_s) {loglog_slope(N, [r['apply_s'] for r in sel]):.3f}")
    return EXIT_OK


def cmd_precond(args) -> int:
    rows = []
    parity_ok = True
    for p in args.ps:
        for n_t in args.nt:
            n_s = args.ns[0] if args.ns else n_t
            prob = manufactured_problem(args.geometry, p, n_s, n_t)
            counts = set()
            for m in args.methods:
                t0 = time.perf_counter()
                res = solve_preconditioned(prob, m, tol=args.tol, max_iter=args.max_iter, rank=args.rank)
                wall = time.perf_counter() - t0
                counts.add(res.iterations)
                rows.append({"p": p, "N_t": n_t, "N_s": n_s, "method": m.lower(), "iterations": res.iterations,
                             "converged": res.converged, "wall_s": wall, "l2_error": l2_error(prob, res.x)})
                if args.history_dir:
                    Path(args.history_dir).mkdir(parents=True, exist_ok=True)
                    write_history_csv(Path(args.history_dir) / f"history_p{p}_nt{n_t}_{m.lower()}.csv", res.residuals)
                if not res.converged:
                    parity_ok = False
            if len(counts) > 1:
                _log(f"iteration counts differ across methods at p={p}, N_t={n_t}: {sorted(counts)}")
                parity_ok = False
    write_csv(args.output, ["p", "N_t", "N_s", "method", "iterations", "converged", "wall_s", "l2_error"], rows)
    return EXIT_OK if parity_ok else EXIT_FAIL


def cmd_verify(args) -> int:
    results = run_suite(args.seed, corrupt_band=args.inject_band_corruption)
    write_csv(args.output, ["check", "passed", "detail"],
              [{"check": r.name, "passed": r.passed, "detail": r.detail} for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _shared(p: argparse.ArgumentParser, **defaults) -> None:
    p.add_argument("--pt", type=int_list, default=defaults.get("pt"), help="time degree(s)")
    p.add_argument("--ps", type=int_list, default=defaults.get("ps", [2]), help="space degree(s)")
    p.add_argument("--nt", type=int_list, default=defaults.get("nt", [8]), help="time element count(s)")
    p.add_argument("--ns", type=int_list, default=defaults.get("ns", [8]), help="space element count(s) per direction")
    p.add_argument("--methods", type=method_list, default=defaults.get("methods", ["LU", "AR", "LR"]),
                   help="comma-separated subset of dt,lu,ar,lr")
    p.add_argument("--geometry", choices=sorted(GEOMETRIES), default=defaults.get("geometry", "unit-cube"))
    p.add_argument("--tol", type=float, default=1e-8, help="GMRES tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="-", help="CSV path, '-' for stdout")
    p.add_argument("--instrument", action="store_true", help="report modelled flop counters")
    p.add_argument("--rank", type=int, choices=(1, 2), default=1, help="rank of the LR split")
    p.add_argument("--config", help="key=value file with defaults for these flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatkron", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cond-table", help="condition numbers of the time transforms")
    _shared(p, pt=[1, 2, 3, 4, 5], nt=[32, 64, 128])
    p.add_argument("--mode", choices=("dt", "ar", "lr"), default="ar")
    p.set_defaults(func=cmd_cond_table)

    p = sub.add_parser("solve", help="direct solve of a Cartesian heat problem")
    _shared(p)
    p.add_argument("--dim", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--time", choices=("galerkin", "fd-uniform", "fd-geometric"), default="galerkin")
    p.add_argument("--beta", type=float, default=1.2, help="ratio of the geometric FD partition")
    p.add_argument("--check-tol", type=float, default=1e-8, help="allowed cross-method difference")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("scaling", help="operation counts and timings over a size ladder")
    _shared(p, ns=[4, 8, 16, 32], nt=[8])
    p.add_argument("--dim", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--vary", choices=("space", "time"), default="space")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("precond", help="GMRES on a mapped domain with the parametric preconditioner")
    _shared(p, ps=[1, 2], nt=[8], ns=None, geometry="rotated-quarter-annulus-3d")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--history-dir", help="write per-run residual histories (iter,residual) here")
    p.set_defaults(func=cmd_precond)

    p = sub.add_parser("verify", help="run the invariant suite")
    _shared(p)
    p.add_argument("--inject-band-corruption", action="store_true",
                   help="perturb a stored LU band; the suite must then fail")
    p.set_defaults(func=cmd_verify)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values inserted before the explicit flags."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    extra = []
    for k, v in read_config(args.config).items():
        if k == "config":
            continue
        if v.lower() in ("true", "yes", "on"):
            extra.append(f"--{k}")
        elif v.lower() in ("false", "no", "off"):
            continue
        else:
            extra += [f"--{k}", v]
    return parser.parse_args([argv[0]] + extra + list(argv[1:]))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except (UsageError, OSError) as exc:
        _log(f"heatkron: error: {exc}")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        _log(f"heatkron: error: {exc}")
        return EXIT_USAGE
    except HeatKronError as exc:
        _log(f"heatkron: {type(exc).__name__}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
