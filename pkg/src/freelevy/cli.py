"""Command line entry point ``freelevy``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 acceptance
threshold violated under ``compare --check``.
"""
from __future__ import annotations

import argparse
import os
import re
import sys

import numpy as np

from freelevy import __version__, jsonio
from freelevy.burgers import LimitLaw, write_density_csv
from freelevy.ensemble import (
    build_matrix_params,
    fmt,
    iter_path,
    replica_rng,
    sample_hermitian_bm_increment,
    write_matrix_dump,
    write_path_csv,
)
from freelevy.errors import (
    BranchError,
    DomainError,
    EigensolverError,
    FiniteActivityError,
    FreeLevyError,
    InvalidMeasureError,
    MomentDivergenceError,
    ResourceGuardError,
)
from freelevy.harness import load_config, render_table, report, run_experiment
from freelevy.measures import pair_from_spec
from freelevy.spectral import EmpiricalMeasure, eigvalsh, gap_diagnostics

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run config (schema 1); packaged configs are found by name")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress and tables")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="freelevy", description="Hermitian Levy matrix ensembles and their free limits.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate matrix paths")
    s.add_argument("--preset", help="pair preset, e.g. free_poisson:1 or mixed:0.5,0.5,1")
    s.add_argument("--n", type=int, help="matrix dimension")
    s.add_argument("--T", type=float, help="time horizon")
    s.add_argument("--n-grid", type=int, help="number of grid intervals on [0, T]")
    s.add_argument("--alpha", type=float, help="truncation exponent in (0, 1/2)")
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--dump", action="store_true",
                   help="write binary matrix dumps and reference them instead of eigenvalues")
    s.add_argument("--eigensolver", choices=("kernel", "lapack"), default=None)

    lim = sub.add_parser("limit", parents=[common], help="density/CDF table of the limit law")
    lim.add_argument("--preset", help="pair preset")
    lim.add_argument("--t", default=None, help="time or comma-separated times")
    lim.add_argument("--grid", default="-3:3:601", help="lo:hi:count")

    c = sub.add_parser("compare", parents=[common], help="full convergence experiment")
    c.add_argument("--check", action="store_true", help="exit 3 when an acceptance threshold fails")
    c.add_argument("--workers", type=int, help="worker processes")

    d = sub.add_parser("diagnose", parents=[common], help="gap and repulsion diagnostics")
    d.add_argument("--preset", help="simulate this pair instead of the raw Hermitian Brownian motion")
    d.add_argument("--n", default="25,50,100", help="comma-separated dimensions")
    d.add_argument("--samples", type=int, default=500)
    d.add_argument("--p", type=float, default=1.5)
    d.add_argument("--t", type=float, default=1.0)
    d.add_argument("--alpha", type=float, default=0.25)

    r = sub.add_parser("report", parents=[common], help="rebuild summary tables from a run directory")
    r.add_argument("run_dir")
    return parser


def _fix_negative_values(argv):
    """Glue ``--opt -3:3:601`` into ``--opt=-3:3:601`` so argparse accepts it."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) and re.match(r"^-[\d.]", argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise UsageError(f"--grid expects lo:hi:count, got {text!r}") from exc
    if count < 1 or not hi >= lo:
        raise UsageError("--grid needs count >= 1 and hi >= lo")
    return np.linspace(lo, hi, count)


def _pair(args, cfg):
    if getattr(args, "preset", None):
        return pair_from_spec(args.preset)
    if cfg is not None:
        return cfg.generating_pair
    raise UsageError("give --preset or --config")


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8"), True


def cmd_simulate(args, cfg) -> int:
    pair = _pair(args, cfg)
    n = args.n if args.n is not None else (cfg.n_list[0] if cfg else None)
    if n is None:
        raise UsageError("give --n or --config")
    T = args.T if args.T is not None else (cfg.T if cfg else 1.0)
    n_grid = args.n_grid if args.n_grid is not None else (cfg.n_grid if cfg else 4)
    alpha = args.alpha if args.alpha is not None else (cfg.alpha if cfg else 0.25)
    seed = args.seed if args.seed is not None else (cfg.master_seed if cfg else 0)
    solver = args.eigensolver or (cfg.eigensolver if cfg else "kernel")
    eps = cfg.eps if cfg else None
    if args.replicas < 1:
        raise UsageError("--replicas must be >= 1")
    if args.out is None and (args.replicas > 1 or args.dump):
        raise UsageError("--out DIR is required for several replicas or --dump")
    params = build_matrix_params(pair, n, alpha, eps)
    for rep in range(args.replicas):
        rng = replica_rng(seed, n, rep)
        times, kinds, payload = [], [], []
        for pt in iter_path(params, T, n_grid, rng, keep_pre_jump=False):
            times.append(pt.time)
            kinds.append(pt.kind)
            payload.append(pt.matrix if args.dump else eigvalsh(pt.matrix, solver))
        stem = f"path_n{n}_r{rep}"
        if args.out is None:
            write_path_csv(sys.stdout, times, kinds, eigenvalues=payload)
            continue
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, stem + ".csv"), "w", newline="", encoding="utf-8") as fh:
            if args.dump:
                write_matrix_dump(os.path.join(args.out, stem + ".hlev"), payload)
                refs = [f"{stem}.hlev#{k}" for k in range(len(payload))]
                write_path_csv(fh, times, kinds, matrix_refs=refs)
            else:
                write_path_csv(fh, times, kinds, eigenvalues=payload)
        if not args.quiet:
            print(f"{stem}: {len(times)} skeleton points, {kinds.count('jump')} jumps", file=sys.stderr)
    return EXIT_OK


def cmd_limit(args, cfg) -> int:
    pair = _pair(args, cfg)
    if args.t is not None:
        try:
            times = [float(v) for v in args.t.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --t {args.t!r}") from exc
    elif cfg is not None:
        times = list(cfg.eval_times)
    else:
        times = [1.0]
    xs = _parse_grid(args.grid)
    laws = [LimitLaw(pair, t) for t in times]
    fh, own = _open_out(args.out)
    try:
        write_density_csv(fh, laws, xs)
    except BranchError as exc:
        diag = exc.diagnostics()
        print(jsonio.dumps(diag), file=sys.stderr)
        if args.out:
            jsonio.write(args.out + ".diagnostics.json", diag)
        raise
    finally:
        if own:
            fh.close()
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    if cfg is None:
        raise UsageError("compare needs --config")
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        cfg = cfg.replace(**changes)
    out = args.out if args.out is not None else cfg.output_dir
    if out is None:
        out = os.path.join("runs", cfg.name)

    def progress(cell):
        if not args.quiet:
            tag = "ok" if cell["status"] == "ok" else cell["error"]
            print(f"n={cell['n']} replica={cell['replica']}: {tag}", file=sys.stderr)

    summary = run_experiment(cfg, out, progress)
    if not args.quiet:
        print(render_table(summary))
    if summary.status != "ok":
        print(f"run failed: {summary.n_failed}/{summary.n_cells} cells failed", file=sys.stderr)
        return EXIT_NUMERIC
    if args.check and not summary.checks_passed:
        for c in summary.checks:
            if not c["passed"]:
                print(f"threshold failed: {c['name']}: {c['detail']}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def diagnose_samples(n: int, samples: int, t: float, seed: int, pair=None, alpha: float = 0.25):
    """ESDs for the repulsion diagnostic.

    Without a pair these are the raw Hermitian Brownian motion H(t), whose
    entries have variance t (diagonal) and t/2 per real part (off-diagonal).
    """
    out = []
    params = build_matrix_params(pair, n, alpha) if pair is not None else None
    for k in range(samples):
        rng = replica_rng(seed, n, k)
        if params is None:
            a = sample_hermitian_bm_increment(n, t, rng).to_dense()
        else:
            a = None
            for pt in iter_path(params, t, 1, rng, keep_pre_jump=False):
                a = pt.matrix
        out.append(EmpiricalMeasure(eigvalsh(a)))
    return out


def cmd_diagnose(args, cfg) -> int:
    try:
        ns = [int(v) for v in args.n.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --n {args.n!r}") from exc
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    pair = pair_from_spec(args.preset) if args.preset else (cfg.generating_pair if cfg else None)
    seed = args.seed if args.seed is not None else (cfg.master_seed if cfg else 0)
    results = []
    for n in ns:
        diag = gap_diagnostics(diagnose_samples(n, args.samples, args.t, seed, pair, args.alpha), args.p)
        row = {"n": n}
        row.update(diag.to_dict())
        results.append(row)
        if not args.quiet:
            print(f"n={n}: min gap {fmt(diag.min_gap)}, E|gap|^-{args.p:g} ~ {diag.repulsion_estimate:.6g} "
                  f"+- {diag.standard_error:.2g}", file=sys.stderr)
    doc = {"source": "ensemble" if pair is not None else "hermitian_bm", "t": args.t, "results": results}
    fh, own = _open_out(args.out)
    try:
        fh.write(jsonio.dumps(doc) + "\n")
    finally:
        if own:
            fh.close()
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    summary = report(args.run_dir)
    table = render_table(summary)
    if args.out:
        fh, own = _open_out(args.out)
        with fh:
            fh.write(table + "\n")
    if not args.quiet:
        print(table)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "limit": cmd_limit,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_fix_negative_values(argv))
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        cfg = load_config(args.config) if args.config else None
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (BranchError, EigensolverError, MomentDivergenceError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, InvalidMeasureError, FiniteActivityError, ResourceGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FreeLevyError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
