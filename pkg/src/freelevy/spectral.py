"""Eigenvalues, empirical spectral measures and distances to a limit law."""
from __future__ import annotations

import csv
from freelevy import jsonio
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from freelevy._backend import get_kernels
from freelevy.ensemble import HermitianMatrix, PathSample, fmt
from freelevy.errors import DomainError, EigensolverError

__all__ = [
    "EmpiricalMeasure",
    "SpectralProcess",
    "GapDiagnostics",
    "eigvalsh",
    "esd",
    "spectral_process",
    "kolmogorov_distance",
    "wasserstein1",
    "stieltjes_of_esd",
    "gap_diagnostics",
    "write_esd_csv",
]

EIGENSOLVERS = ("kernel", "lapack")


def _dense(a) -> np.ndarray:
    if isinstance(a, HermitianMatrix):
        return a.to_dense()
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("expected a square matrix")
    return a


def eigvalsh(a, method: str = "kernel", backend: str | None = None) -> np.ndarray:
    """Eigenvalues of a Hermitian matrix in descending order.

    ``method="kernel"`` runs Householder tridiagonalization followed by
    implicit-shift QL (compiled when available); ``"lapack"`` defers to
    :func:`numpy.linalg.eigvalsh`.
    """
    a = _dense(a)
    if a.shape[0] == 0:
        return np.empty(0)
    if method == "lapack":
        ev = np.linalg.eigvalsh(a)
    elif method == "kernel":
        ev, ok = get_kernels(backend).hermitian_eigenvalues(np.ascontiguousarray(a, dtype=complex))
        if not ok:
            raise EigensolverError("implicit QL did not converge", matrix=HermitianMatrix.from_dense(a))
    else:
        raise DomainError(f"unknown eigensolver {method!r}")
    return np.sort(np.asarray(ev, dtype=float))[::-1]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform measure on eigenvalues stored in descending order."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.sort(np.asarray(self.eigenvalues, dtype=float))[::-1].copy()
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def ascending(self) -> np.ndarray:
        return self.eigenvalues[::-1]

    def cdf(self, x):
        return np.searchsorted(self.ascending, x, side="right") / self.n

    def moment(self, k: int) -> float:
        return float(np.mean(self.eigenvalues ** k))

    @property
    def mean(self) -> float:
        return float(np.mean(self.eigenvalues))

    @property
    def variance(self) -> float:
        return float(np.var(self.eigenvalues))

    @property
    def min_gap(self) -> float:
        if self.n < 2:
            return math.inf
        return float(np.min(self.eigenvalues[:-1] - self.eigenvalues[1:]))


@dataclass(frozen=True)
class SpectralProcess:
    times: np.ndarray
    measures: tuple

    def __post_init__(self):
        if len(self.times) != len(self.measures):
            raise DomainError("times and measures must align")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be increasing")
        if len({m.n for m in self.measures}) > 1:
            raise DomainError("all measures must have the same n")

    def at(self, t: float) -> EmpiricalMeasure:
        hits = np.flatnonzero(np.asarray(self.times) == t)
        if hits.size == 0:
            raise DomainError(f"time {t} not in the process")
        return self.measures[int(hits[0])]


def esd(a, method: str = "kernel") -> EmpiricalMeasure:
    return EmpiricalMeasure(eigvalsh(a, method))


def spectral_process(path: PathSample, times: Iterable[float], method: str = "kernel") -> SpectralProcess:
    """ESDs of the path at skeleton times; the value after any jump at t is used.

    Times off the skeleton are refused: the process jumps, so interpolation is
    not meaningful.
    """
    times = [float(t) for t in times]
    measures = []
    for t in times:
        hits = np.flatnonzero(path.times == t)
        if hits.size == 0:
            raise DomainError(f"time {t} is not a skeleton time; interpolation refused")
        measures.append(esd(path.skeleton[int(hits[-1])], method))
    return SpectralProcess(np.array(times), tuple(measures))


def kolmogorov_distance(m: EmpiricalMeasure, cdf: Callable, atoms: Sequence[float] = ()) -> float:
    """sup_x |F_n(x) - F(x)| for a right-continuous limit cdf ``F``.

    Evaluated exactly at the ESD steps (value and left limit, tied eigenvalues
    grouped) and at the atoms of ``F`` given in ``atoms``; for continuous F
    this is max_i max(|F(l_i) - i/n|, |F(l_i) - (i-1)/n|).
    """
    x = m.ascending
    n = x.size
    vals, counts = np.unique(x, return_counts=True)
    upper = np.cumsum(counts) / n
    lower = upper - counts / n
    f_at = np.asarray(cdf(vals), dtype=float)
    f_left = np.asarray(cdf(np.nextafter(vals, -np.inf)), dtype=float)
    d = max(np.max(np.abs(f_at - upper)), np.max(np.abs(f_left - lower)))
    for a in atoms:
        a = float(a)
        fa, fl = float(cdf(np.array([a]))[0]), float(cdf(np.array([np.nextafter(a, -np.inf)]))[0])
        d = max(d, abs(fa - m.cdf(a)), abs(fl - m.cdf(np.nextafter(a, -np.inf))))
    return float(d)


def wasserstein1(m: EmpiricalMeasure, quantile: Callable) -> float:
    """mean_i |l_(i) - Q((i - 1/2)/n)| with eigenvalues in ascending order."""
    n = m.n
    q = np.asarray(quantile((np.arange(1, n + 1) - 0.5) / n), dtype=float)
    return float(np.mean(np.abs(m.ascending - q)))


def stieltjes_of_esd(m: EmpiricalMeasure, z):
    """(1/n) sum_i 1/(z - l_i) for Im z > 0."""
    zz = np.asarray(z, dtype=complex)
    if np.any(~(zz.imag > 0)):
        raise DomainError("Stieltjes transform needs Im z > 0")
    out = np.mean(1.0 / (zz[..., None] - m.eigenvalues), axis=-1)
    return out[()] if np.ndim(z) == 0 else out


@dataclass(frozen=True)
class GapDiagnostics:
    min_gap: float
    p: float
    repulsion_estimate: float
    standard_error: float
    n_samples: int

    def to_dict(self) -> dict:
        return {"min_gap": self.min_gap, "p": self.p, "repulsion_estimate": self.repulsion_estimate,
                "stderr": self.standard_error, "n_samples": self.n_samples}

    def to_json(self) -> str:
        return jsonio.dumps(self.to_dict(), indent=None)


def _pair_repulsion(ev: np.ndarray, p: float) -> float:
    diff = np.abs(ev[:, None] - ev[None, :])
    iu = np.triu_indices(ev.size, 1)
    return float(np.mean(diff[iu] ** (-p)))


def gap_diagnostics(samples: Sequence[EmpiricalMeasure], p: float) -> GapDiagnostics:
    """Smallest adjacent gap and the Monte Carlo mean of 1/|l_r - l_l|^p over all pairs.

    ``standard_error`` is the standard error across samples of the per-sample
    pair average.
    """
    if not 1.0 <= p < 2.0:
        raise DomainError("p must lie in [1, 2)")
    if not samples:
        raise DomainError("no samples")
    n = samples[0].n
    if n < 2 or any(s.n != n for s in samples):
        raise DomainError("all samples need the same n >= 2")
    per = np.array([_pair_repulsion(s.eigenvalues, p) for s in samples])
    k = per.size
    se = float(np.std(per, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return GapDiagnostics(min(s.min_gap for s in samples), float(p), float(per.mean()), se, k)


def write_esd_csv(fh, process: SpectralProcess) -> None:
    """ESD export with columns ``time,index,eigenvalue`` (index 1 = largest)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "index", "eigenvalue"])
    for t, m in zip(process.times, process.measures):
        for i, v in enumerate(m.eigenvalues, start=1):
            w.writerow([fmt(t), i, fmt(v)])
