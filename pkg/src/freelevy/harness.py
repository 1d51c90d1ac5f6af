"""Experiment configuration, Monte Carlo convergence runs and their artifacts.

A run directory contains::

    manifest.json    config copy, seed, versions, per-cell status
    cells.jsonl      one record per (n, replica) cell
    summary.json     aggregate per (n, t), rebuilt from the two files above
    paths/           ESD CSV per path at the evaluation times
    failures/        solver diagnostics and matrix dumps of failed cells
"""
from __future__ import annotations

import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

import freelevy
from freelevy import jsonio
from freelevy._backend import BACKEND
from freelevy.burgers import LimitLaw, cauchy_transform
from freelevy.ensemble import (
    build_matrix_params,
    grid_times,
    iter_path,
    replica_rng,
)
from freelevy.errors import (
    BranchError,
    DomainError,
    EigensolverError,
    FreeLevyError,
    MomentDivergenceError,
)
from freelevy.measures import GeneratingPair, free_cumulants, pair_from_spec
from freelevy.spectral import (
    EmpiricalMeasure,
    SpectralProcess,
    eigvalsh,
    kolmogorov_distance,
    stieltjes_of_esd,
    wasserstein1,
    write_esd_csv,
)

__all__ = [
    "SCHEMA_VERSION",
    "Tolerances",
    "RunConfig",
    "RunSummary",
    "Check",
    "load_config",
    "compare_to_limit",
    "run_cell",
    "run_experiment",
    "aggregate",
    "evaluate_checks",
    "report",
    "render_table",
    "Z_GRID",
]

SCHEMA_VERSION = 1
Z_GRID = tuple(complex(x, 1.0) for x in (-2, -1, 0, 1, 2))
GAP_P = 1.5
PACKAGED_CONFIGS = os.path.join(os.path.dirname(__file__), "configs")


@dataclass(frozen=True)
class Tolerances:
    """Acceptance thresholds consulted by ``compare --check``.

    ``ks_max`` applies to the mean KS at ``ks_check_n`` (default: largest n)
    for every evaluation time; ``monotone_se`` is the slack, in standard
    errors, allowed when requiring mean KS to decrease along ``n_list``.
    """

    ks_max: float = 0.06
    ks_check_n: int | None = None
    monotone_se: float = 1.0
    max_failed_fraction: float = 0.2
    transform_max: float | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "Tolerances":
        _reject_unknown(cls, data, "tolerances")
        return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    name: str
    pair: object
    n_list: tuple
    alpha: float = 0.25
    T: float = 1.0
    n_grid: int = 4
    eval_times: tuple = (1.0,)
    replicas: int = 1
    master_seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str | None = None
    eigensolver: str = "kernel"
    eps: float | None = None
    workers: int = 1
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise DomainError(f"unsupported config schema {self.schema!r}")
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list or any(n < 1 for n in n_list) or any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise DomainError("n_list must be nonempty, positive and strictly ascending")
        object.__setattr__(self, "n_list", n_list)
        if not (0 < self.alpha < 0.5):
            raise DomainError("alpha must lie in (0, 1/2)")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError("T must be positive")
        if int(self.n_grid) != self.n_grid or self.n_grid < 1:
            raise DomainError("n_grid must be a positive integer")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        if self.eigensolver not in ("kernel", "lapack"):
            raise DomainError(f"unknown eigensolver {self.eigensolver!r}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise DomainError("workers must be >= 1")
        if isinstance(self.tolerances, dict):
            object.__setattr__(self, "tolerances", Tolerances.from_dict(self.tolerances))
        object.__setattr__(self, "eval_times", tuple(self._snap(t) for t in self.eval_times))
        if not self.eval_times or len(set(self.eval_times)) != len(self.eval_times):
            raise DomainError("eval_times must be nonempty and distinct")
        pair_from_spec(self.pair)  # validate early

    def _snap(self, t: float) -> float:
        """Map an evaluation time onto the exact grid value it names."""
        t = float(t)
        if not 0.0 <= t <= self.T:
            raise DomainError(f"eval time {t} outside [0, T]")
        grid = grid_times(self.T, self.n_grid)
        k = int(np.argmin(np.abs(grid - t)))
        if abs(grid[k] - t) > 1e-9 * max(1.0, self.T):
            raise DomainError(f"eval time {t} is not a grid time k*T/n_grid")
        return float(grid[k])

    @property
    def generating_pair(self) -> GeneratingPair:
        return pair_from_spec(self.pair)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["tolerances"] = asdict(self.tolerances)
        out["n_list"] = list(self.n_list)
        out["eval_times"] = list(self.eval_times)
        if isinstance(self.pair, GeneratingPair):
            out["pair"] = self.pair.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if "schema" not in data:
            raise DomainError('config lacks the "schema" field')
        _reject_unknown(cls, data, "config")
        return cls(**data)

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)


def _reject_unknown(cls, data: dict, what: str):
    if not isinstance(data, dict):
        raise DomainError(f"{what} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise DomainError(f"unknown {what} field(s): {', '.join(unknown)}")


def resolve_config_path(path: str) -> str:
    """Return ``path`` if it exists, else the packaged config of that name."""
    if os.path.exists(path):
        return path
    candidate = os.path.join(PACKAGED_CONFIGS, os.path.basename(path))
    if not candidate.endswith(".json"):
        candidate += ".json"
    if os.path.exists(candidate):
        return candidate
    raise DomainError(f"config file {path!r} not found")


def load_config(path: str) -> RunConfig:
    with open(resolve_config_path(path), encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"invalid JSON in {path}: {exc}") from exc
    return RunConfig.from_dict(data)


# -- distances ----------------------------------------------------------------

def _law_for(pair: GeneratingPair, t: float, cache: dict | None) -> LimitLaw:
    if cache is None:
        return LimitLaw(pair, t)
    key = (pair.to_json(), t)
    if key not in cache:
        cache[key] = LimitLaw(pair, t)
    return cache[key]


def compare_to_limit(process: SpectralProcess, pair, times, laws: dict | None = None) -> list[dict]:
    """KS, W1 and max |psi_n - psi| over :data:`Z_GRID` at each requested time."""
    pair = pair_from_spec(pair)
    out = []
    for t in times:
        t = float(t)
        m = process.at(t)
        law = _law_for(pair, t, laws)
        ks = kolmogorov_distance(m, law.cdf, law.atoms)
        w1 = wasserstein1(m, law.quantile)
        z = np.array(Z_GRID)
        dev = float(np.max(np.abs(stieltjes_of_esd(m, z) - cauchy_transform(law, z))))
        out.append({"t": t, "ks": ks, "w1": w1, "transform": dev})
    return out


# -- one cell -----------------------------------------------------------------

def _rank_one_certificate(jump, pre: np.ndarray, post: np.ndarray) -> float:
    """Upper bound on sigma_2(X(t) - X(t-)) divided by r.

    sigma_2(D) <= ||D - J||_F + sigma_2(J) with J the rank-one increment
    formed in floating point, and sigma_2(J) <= n * eps * r.
    """
    d = post - pre
    j = jump.increment()
    n = d.shape[0]
    bound = np.linalg.norm(d - j) + n * np.finfo(float).eps * jump.r
    return float(bound / jump.r)


def _failure_path(cfg_dir: str | None, n: int, rep: int, ext: str) -> str | None:
    if cfg_dir is None:
        return None
    d = os.path.join(cfg_dir, "failures")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"n{n}_r{rep}.{ext}")


def run_cell(cfg: RunConfig, n: int, rep: int, out_dir: str | None = None,
             laws: dict | None = None) -> dict:
    """Simulate one path and evaluate it; errors are captured in the record."""
    pair = cfg.generating_pair
    record = {"n": n, "replica": rep, "status": "ok", "error": None}
    try:
        params = build_matrix_params(pair, n, cfg.alpha, cfg.eps)
        rng = replica_rng(cfg.master_seed, n, rep)
        eval_set = set(cfg.eval_times)
        measures = {}
        min_gap = math.inf
        rank_one = 0.0
        n_jumps = 0
        for pt in iter_path(params, cfg.T, cfg.n_grid, rng):
            if pt.jump is not None:
                n_jumps += 1
                rank_one = max(rank_one, _rank_one_certificate(pt.jump, pt.pre, pt.matrix))
            if pt.time == 0.0 and pt.kind == "grid" and 0.0 not in eval_set:
                continue
            m = EmpiricalMeasure(eigvalsh(pt.matrix, cfg.eigensolver))
            if pt.time > 0:
                min_gap = min(min_gap, m.min_gap)
            if pt.kind == "grid" and pt.time in eval_set:
                measures[pt.time] = m
        process = SpectralProcess(np.array(cfg.eval_times), tuple(measures[t] for t in cfg.eval_times))
        dist = compare_to_limit(process, pair, cfg.eval_times, laws)
        record.update({
            "ks": [d["ks"] for d in dist],
            "w1": [d["w1"] for d in dist],
            "transform": [d["transform"] for d in dist],
            "mean": [m.mean for m in process.measures],
            "variance": [m.variance for m in process.measures],
            "repulsion": [_repulsion(m) for m in process.measures],
            "min_gap": min_gap if n > 1 else None,
            "rank_one": rank_one,
            "n_jumps": n_jumps,
        })
        if out_dir is not None:
            d = os.path.join(out_dir, "paths")
            os.makedirs(d, exist_ok=True)
            with open(os.path.join(d, f"n{n}_r{rep}.csv"), "w", newline="") as fh:
                write_esd_csv(fh, process)
    except BranchError as exc:
        record.update(status="error", error=f"BranchError: {exc}")
        p = _failure_path(out_dir, n, rep, "json")
        if p:
            jsonio.write(p, exc.diagnostics())
    except EigensolverError as exc:
        record.update(status="error", error=f"EigensolverError: {exc}")
        p = _failure_path(out_dir, n, rep, "hlev")
        if p and exc.matrix is not None:
            exc.dump(p)
    except (FreeLevyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        record.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return record


def _repulsion(m: EmpiricalMeasure) -> float | None:
    if m.n < 2:
        return None
    ev = m.eigenvalues
    i, j = np.triu_indices(ev.size, 1)
    return float(np.mean(np.abs(ev[i] - ev[j]) ** (-GAP_P)))


_WORKER_LAWS: dict = {}


def _cell_job(args):
    cfg_dict, n, rep, out_dir = args
    cfg = RunConfig.from_dict(cfg_dict)
    return run_cell(cfg, n, rep, out_dir, _WORKER_LAWS)


# -- aggregation --------------------------------------------------------------

@dataclass
class RunSummary:
    name: str
    records: list
    per_n: list
    n_cells: int
    n_failed: int
    failed_fraction: float
    status: str
    checks: list
    manifest: dict

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "records": self.records,
            "per_n": self.per_n,
            "n_cells": self.n_cells,
            "n_failed": self.n_failed,
            "failed_fraction": self.failed_fraction,
            "status": self.status,
            "checks": self.checks,
            "manifest": self.manifest,
        }

    def record(self, n: int, t: float) -> dict:
        for r in self.records:
            if r["n"] == n and r["t"] == t:
                return r
        raise KeyError((n, t))

    @property
    def checks_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _stats(values) -> dict:
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"mean": None, "min": None, "max": None, "stderr": None}
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max()), "stderr": se}


def _targets(pair: GeneratingPair, t: float):
    try:
        k1, k2 = free_cumulants(pair, 2)
    except MomentDivergenceError:
        return None, None
    return t * k1, t * k2


def manifest_for(cfg: RunConfig, cells: list) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "library_version": freelevy.__version__,
        "backend": BACKEND,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "cells": [{"n": c["n"], "replica": c["replica"], "status": c["status"], "error": c["error"]}
                  for c in cells],
    }


def aggregate(cfg: RunConfig, cells: list, manifest: dict | None = None) -> RunSummary:
    """Fold cell records into one record per (n, t); pure function of its inputs."""
    pair = cfg.generating_pair
    records, per_n = [], []
    for n in cfg.n_list:
        mine = [c for c in cells if c["n"] == n]
        ok = [c for c in mine if c["status"] == "ok"]
        gaps = [c["min_gap"] for c in ok if c.get("min_gap") is not None]
        per_n.append({
            "n": n,
            "n_ok": len(ok),
            "n_failed": len(mine) - len(ok),
            "min_gap": min(gaps) if gaps else None,
            "rank_one_max": max((c["rank_one"] for c in ok), default=None),
            "jumps_total": sum(c["n_jumps"] for c in ok),
        })
        for k, t in enumerate(cfg.eval_times):
            target_mean, target_var = _targets(pair, t)
            rep = _stats([c["repulsion"][k] for c in ok])
            records.append({
                "n": n,
                "t": t,
                "replicas_ok": len(ok),
                "ks": _stats([c["ks"][k] for c in ok]),
                "w1": _stats([c["w1"][k] for c in ok]),
                "transform": _stats([c["transform"][k] for c in ok]),
                "moments": {
                    "mean": _stats([c["mean"][k] for c in ok]),
                    "variance": _stats([c["variance"][k] for c in ok]),
                    "target_mean": target_mean,
                    "target_variance": target_var,
                },
                "gaps": {"p": GAP_P, "repulsion_estimate": rep["mean"], "stderr": rep["stderr"]},
            })
    n_cells = len(cells)
    n_failed = sum(1 for c in cells if c["status"] != "ok")
    frac = n_failed / n_cells if n_cells else 0.0
    status = "failed" if frac > cfg.tolerances.max_failed_fraction else "ok"
    summary = RunSummary(cfg.name, records, per_n, n_cells, n_failed, frac, status, [],
                         manifest if manifest is not None else manifest_for(cfg, cells))
    summary.checks = [c.to_dict() for c in evaluate_checks(cfg, summary)]
    return summary


def evaluate_checks(cfg: RunConfig, summary: RunSummary) -> list[Check]:
    tol = cfg.tolerances
    out = [Check("failed_fraction", summary.failed_fraction <= tol.max_failed_fraction,
                 f"{summary.failed_fraction:.3f} <= {tol.max_failed_fraction}")]
    n_check = tol.ks_check_n if tol.ks_check_n is not None else cfg.n_list[-1]
    for t in cfg.eval_times:
        try:
            rec = summary.record(n_check, t)
        except KeyError:
            out.append(Check(f"ks_max[n={n_check},t={t:g}]", False, "no such record"))
            continue
        ks = rec["ks"]["mean"]
        out.append(Check(f"ks_max[n={n_check},t={t:g}]", ks is not None and ks <= tol.ks_max,
                         f"mean KS {ks} <= {tol.ks_max}"))
        if tol.transform_max is not None:
            dev = rec["transform"]["mean"]
            out.append(Check(f"transform_max[n={n_check},t={t:g}]",
                             dev is not None and dev <= tol.transform_max,
                             f"mean deviation {dev} <= {tol.transform_max}"))
        if len(cfg.n_list) > 1:
            seq = [summary.record(n, t)["ks"] for n in cfg.n_list]
            good = all(b["mean"] is not None and a["mean"] is not None
                       and b["mean"] < a["mean"] + tol.monotone_se * max(a["stderr"], b["stderr"])
                       for a, b in zip(seq, seq[1:]))
            out.append(Check(f"ks_decreasing[t={t:g}]", good,
                             "means " + ", ".join(f"{s['mean']:.4g}" for s in seq)))
    return out


# -- orchestration --------------------------------------------------------------

def _write_jsonl(path: str, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(jsonio.dumps(row, indent=None) + "\n")


def run_experiment(cfg: RunConfig, out_dir: str | None = None, progress=None) -> RunSummary:
    """Simulate every (n, replica) cell, compare with the limit law and persist.

    Cells are independent (their generators depend only on the master seed,
    n and the replica index), so the outcome does not depend on ``workers``.
    """
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    jobs = [(n, rep) for n in cfg.n_list for rep in range(cfg.replicas)]
    if cfg.workers > 1:
        payload = [(cfg.to_dict(), n, rep, out_dir) for n, rep in jobs]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            cells = []
            for cell in pool.map(_cell_job, payload):
                cells.append(cell)
                if progress:
                    progress(cell)
    else:
        laws: dict = {}
        cells = []
        for n, rep in jobs:
            cell = run_cell(cfg, n, rep, out_dir, laws)
            cells.append(cell)
            if progress:
                progress(cell)
    manifest = manifest_for(cfg, cells)
    summary = aggregate(cfg, cells, manifest)
    if out_dir is not None:
        jsonio.write(os.path.join(out_dir, "manifest.json"), manifest)
        _write_jsonl(os.path.join(out_dir, "cells.jsonl"), cells)
        jsonio.write(os.path.join(out_dir, "summary.json"), summary.to_dict())
    return summary


def report(run_dir: str, write: bool = True) -> RunSummary:
    """Rebuild the summary from ``manifest.json`` and ``cells.jsonl``."""
    man_path = os.path.join(run_dir, "manifest.json")
    cells_path = os.path.join(run_dir, "cells.jsonl")
    if not (os.path.exists(man_path) and os.path.exists(cells_path)):
        raise DomainError(f"{run_dir} is not a run directory")
    manifest = jsonio.read(man_path)
    cfg = RunConfig.from_dict(manifest["config"])
    with open(cells_path, encoding="utf-8") as fh:
        cells = [json.loads(line) for line in fh if line.strip()]
    summary = aggregate(cfg, cells, manifest)
    if write:
        jsonio.write(os.path.join(run_dir, "summary.json"), summary.to_dict())
    return summary


def _g(x, spec=".4g") -> str:
    return "-" if x is None else format(x, spec)


def render_table(summary: RunSummary) -> str:
    """Plain-text table of the per-(n, t) records and checks."""
    head = f"{'n':>5} {'t':>6} {'KS mean':>9} {'KS se':>8} {'W1':>9} {'psi dev':>9} " \
           f"{'mean':>9} {'target':>9} {'var':>9} {'target':>9} {'repuls.':>9}"
    lines = [f"run {summary.name}: {summary.n_cells} cells, {summary.n_failed} failed, status {summary.status}",
             head, "-" * len(head)]
    for r in summary.records:
        mo = r["moments"]
        lines.append(
            f"{r['n']:>5} {r['t']:>6.3g} {_g(r['ks']['mean']):>9} {_g(r['ks']['stderr'], '.2g'):>8} "
            f"{_g(r['w1']['mean']):>9} {_g(r['transform']['mean']):>9} {_g(mo['mean']['mean']):>9} "
            f"{_g(mo['target_mean']):>9} {_g(mo['variance']['mean']):>9} {_g(mo['target_variance']):>9} "
            f"{_g(r['gaps']['repulsion_estimate']):>9}")
    lines.append("")
    for p in summary.per_n:
        lines.append(f"n={p['n']}: min gap {_g(p['min_gap'], '.3e')}, rank-one bound/r {_g(p['rank_one_max'], '.2e')}, "
                     f"jumps {p['jumps_total']}")
    lines.append("")
    for c in summary.checks:
        lines.append(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['detail']}")
    return "\n".join(lines)
