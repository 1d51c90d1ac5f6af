"""Unitarily invariant Hermitian Levy matrix ensembles built from a generating pair.

For dimension ``n`` and truncation exponent ``alpha`` the matrix process is

    X(t) = drift*t*I + sqrt(sigma_n2/n) H(t) + sum_{jumps <= t} sign_j r_j v_j v_j^*

where ``H`` is Hermitian Brownian motion (diagonal variance t, real and
imaginary off-diagonal parts variance t/2), jump times form a Poisson process
of rate ``n * mass(radial)``, ``r_j`` follows the normalized radial measure,
``v_j`` is Haar on the unit sphere of C^n and
``drift = gamma - int_{0<r<=1} sign*r radial(dr)``.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from freelevy.errors import DomainError, FiniteActivityError, ResourceGuardError
from freelevy.measures import Density, GeneratingPair, RealMeasure

JUMP_GUARD = 10_000_000
DUMP_MAGIC = b"HLEV"
DUMP_VERSION = 1

__all__ = [
    "SignRule",
    "MatrixEnsembleParams",
    "HermitianMatrix",
    "JumpEvent",
    "SkeletonPoint",
    "PathSample",
    "truncation_radius",
    "build_matrix_params",
    "sample_haar_vector",
    "sample_hermitian_bm_increment",
    "iter_path",
    "sample_path",
    "replica_rng",
    "write_matrix_dump",
    "read_matrix_dump",
    "write_path_csv",
]


def truncation_radius(n: int, alpha: float) -> float:
    """Upper end n^(2a)/(n^a - 1) of the radial support; infinite for n = 1."""
    if n == 1:
        return math.inf
    na = n ** alpha
    return n ** (2 * alpha) / (na - 1.0)


@dataclass(frozen=True)
class SignRule:
    """Split of the radial measure by the side of rho each piece was folded from."""

    positive: RealMeasure
    negative: RealMeasure


@dataclass(frozen=True)
class MatrixEnsembleParams:
    n: int
    alpha: float
    sigma_n2: float
    gamma: float
    radial: RealMeasure
    sign_rule: SignRule
    jump_rate: float
    r_max: float
    source_sigma2: float = 0.0
    extra_drift: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def compensator(self) -> float:
        """int_{0<r<=1} sign*r radial(dr)."""
        inside = lambda r: np.where((r > 0) & (r <= 1.0), r, 0.0)
        return (self.sign_rule.positive.integrate(inside)
                - self.sign_rule.negative.integrate(inside))

    @property
    def drift(self) -> float:
        """Coefficient of t*I in the simulated decomposition."""
        return self.gamma - self.compensator + self.extra_drift

    @property
    def gaussian_scale(self) -> float:
        return math.sqrt(self.sigma_n2 / self.n)


def _fold_density(d: Density, side: int, r_max: float) -> Density | None:
    """Density of r = side*x (r > 0) on the grid [0, min(r_max, max|x|)].

    Both sides share this grid so that they can be added.
    """
    top = min(max(d.hi, -d.lo), r_max)
    if top <= 0:
        return None
    m = d.samples.size
    r = np.linspace(0.0, top, m)
    vals = np.interp(side * r, d.nodes, d.samples, left=0.0, right=0.0)
    vals[r >= r_max] = 0.0
    if not np.any(vals > 0):
        return None
    return Density(0.0, top, vals)


def _folded_side(rho: RealMeasure, side: int, r_max: float) -> RealMeasure:
    atoms = [(side * loc, mass) for loc, mass in rho.atoms
             if side * loc > 0 and side * loc < r_max]
    density = _fold_density(rho.density, side, r_max) if rho.density is not None else None
    return RealMeasure(tuple(atoms), density)


def _radial_weight(r):
    return (1.0 + r * r) / (r * r)


def _apply_radial_weight(m: RealMeasure, eps: float | None):
    """Multiply by (1+r^2)/r^2; returns (measure, dropped_mass, dropped_drift)."""
    atoms = [(loc, mass * _radial_weight(loc)) for loc, mass in m.atoms]
    if m.density is None:
        return RealMeasure(tuple(atoms)), 0.0, 0.0
    d = m.density
    r = d.nodes
    near_zero = r < d.step
    blows_up = bool(np.any(d.samples[near_zero] > 0))
    if blows_up and eps is None:
        raise FiniteActivityError(
            "radial measure has infinite mass: rho charges a neighbourhood of 0; "
            "pass eps to truncate small jumps")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(d.samples == 0.0, 0.0, d.samples * _radial_weight(r))
    dropped_mass = dropped_drift = 0.0
    if eps is not None:
        band = r < eps
        w = d.trapezoid_weights()
        finite = band & (r > 0)
        dropped_mass = float(np.sum((w * s)[finite]))
        # jumps of size <= 1 are compensated, so removing them together with
        # their compensation leaves the mean unchanged; only the part above 1
        # has to be returned as drift
        dropped_drift = float(np.sum((w * s * r)[finite & (r > 1.0)]))
        s = np.where(band, 0.0, s)
    if not np.all(np.isfinite(s)):
        raise FiniteActivityError("radial density is not finite")
    return RealMeasure(tuple(atoms), Density(d.lo, d.hi, s)), dropped_mass, dropped_drift


def build_matrix_params(p: GeneratingPair, n: int, alpha: float = 0.25,
                        eps: float | None = None) -> MatrixEnsembleParams:
    """Ensemble parameters of the n x n matrix process attached to the pair ``p``.

    ``eps`` optionally drops radial jumps below ``eps`` (for laws whose radial
    part has infinite mass).  The mean of the trace is preserved and the
    truncation is recorded in ``metadata``.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not 0.0 < alpha < 0.5:
        raise DomainError("alpha must lie in (0, 1/2)")
    n = int(n)
    r_max = truncation_radius(n, alpha)
    rho = p.rho_rest
    gamma = (p.eta
             + rho.integrate(lambda r: np.where(np.abs(r) <= 1.0, r, 0.0))
             - rho.integrate(lambda r: np.where(np.abs(r) <= 1.0, 0.0, 1.0 / r)))

    pos, neg = (_folded_side(rho, side, r_max) for side in (1, -1))
    pos, pm, pd = _apply_radial_weight(pos, eps)
    neg, nm, nd = _apply_radial_weight(neg, eps)
    radial = pos + neg
    mass = pos.total_mass() + neg.total_mass()
    if not math.isfinite(mass):
        raise FiniteActivityError("radial measure has infinite mass")
    metadata = {}
    if eps is not None:
        metadata = {"eps_truncation": eps, "dropped_mass": pm + nm, "dropped_drift": pd - nd}
    return MatrixEnsembleParams(
        n=n, alpha=float(alpha), sigma_n2=p.sigma2 + (n - 1) / n ** 2, gamma=float(gamma),
        radial=radial, sign_rule=SignRule(pos, neg), jump_rate=n * mass, r_max=r_max,
        source_sigma2=p.sigma2, extra_drift=pd - nd, metadata=metadata,
    )


class HermitianMatrix:
    """Hermitian matrix stored as a real diagonal plus the strict upper triangle."""

    __slots__ = ("n", "diag", "upper")

    def __init__(self, diag, upper):
        self.diag = np.asarray(diag, dtype=float)
        self.n = self.diag.size
        self.upper = np.asarray(upper, dtype=complex)
        if self.upper.size != self.n * (self.n - 1) // 2:
            raise DomainError("upper triangle has the wrong length")

    @classmethod
    def from_dense(cls, a) -> "HermitianMatrix":
        a = np.asarray(a)
        n = a.shape[0]
        return cls(np.real(np.diag(a)).copy(), a[np.triu_indices(n, 1)].astype(complex))

    @classmethod
    def zeros(cls, n: int) -> "HermitianMatrix":
        return cls(np.zeros(n), np.zeros(n * (n - 1) // 2, dtype=complex))

    def to_dense(self) -> np.ndarray:
        n = self.n
        a = np.zeros((n, n), dtype=complex)
        iu = np.triu_indices(n, 1)
        a[iu] = self.upper
        a[iu[1], iu[0]] = self.upper.conj()
        a[np.diag_indices(n)] = self.diag
        return a

    def __array__(self, dtype=None, copy=None):
        a = self.to_dense()
        return a if dtype is None else a.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, HermitianMatrix):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.diag, other.diag)
                and np.array_equal(self.upper, other.upper))

    def __repr__(self):
        return f"HermitianMatrix(n={self.n})"

    def packed_floats(self) -> np.ndarray:
        """Upper triangle (with diagonal) row-major as interleaved re/im float64."""
        a = self.to_dense()
        iu = np.triu_indices(self.n)
        vals = a[iu]
        out = np.empty(2 * vals.size)
        out[0::2] = vals.real
        out[1::2] = vals.imag
        return out


def _mirror_upper(a: np.ndarray) -> np.ndarray:
    """Overwrite the lower triangle with the conjugate of the upper one, in place."""
    n = a.shape[0]
    iu = np.triu_indices(n, 1)
    a[iu[1], iu[0]] = a[iu].conj()
    idx = np.diag_indices(n)
    a[idx] = a[idx].real
    return a


def replica_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for a (cell, replica) key, independent of execution order."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), (None if rng is None else int(rng))


def sample_haar_vector(n: int, rng=None) -> np.ndarray:
    """Uniform unit vector on the sphere of C^n."""
    rng, _ = _as_rng(rng)
    g = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return g / np.linalg.norm(g)


def _bm_dense(n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    a = np.zeros((n, n), dtype=complex)
    if dt <= 0:
        return a
    iu = np.triu_indices(n, 1)
    m = iu[0].size
    off = rng.standard_normal((2, m)) * math.sqrt(dt / 2.0)
    a[iu] = off[0] + 1j * off[1]
    a[iu[1], iu[0]] = off[0] - 1j * off[1]
    a[np.diag_indices(n)] = rng.standard_normal(n) * math.sqrt(dt)
    return a


def sample_hermitian_bm_increment(n: int, dt: float, rng=None) -> HermitianMatrix:
    """Increment of Hermitian Brownian motion over a step of length ``dt``.

    Diagonal entries are N(0, dt); real and imaginary parts above the
    diagonal are independent N(0, dt/2).  ``dt == 0`` gives the zero matrix.
    """
    if dt < 0:
        raise DomainError("dt must be nonnegative")
    rng, _ = _as_rng(rng)
    return HermitianMatrix.from_dense(_bm_dense(n, dt, rng))


@dataclass(frozen=True)
class JumpEvent:
    time: float
    r: float
    v: np.ndarray
    sign: int

    def increment(self) -> np.ndarray:
        """``sign * r * v v^*`` with the lower triangle mirrored from the upper one."""
        return _mirror_upper(self.sign * self.r * np.outer(self.v, self.v.conj()))


class _JumpTable:
    """Discrete mixture over radial atoms and trapezoid cells, both signs."""

    def __init__(self, rule: SignRule):
        kinds, lo, hi, flo, fhi, mass, sign = [], [], [], [], [], [], []
        for s, m in ((1, rule.positive), (-1, rule.negative)):
            for loc, w in m.atoms:
                kinds.append(0); lo.append(loc); hi.append(loc)
                flo.append(0.0); fhi.append(0.0); mass.append(w); sign.append(s)
            if m.density is not None:
                d = m.density
                x, f = d.nodes, d.samples
                cm = 0.5 * d.step * (f[:-1] + f[1:])
                keep = cm > 0
                kinds.extend([1] * int(keep.sum()))
                lo.extend(x[:-1][keep]); hi.extend(x[1:][keep])
                flo.extend(f[:-1][keep]); fhi.extend(f[1:][keep])
                mass.extend(cm[keep]); sign.extend([s] * int(keep.sum()))
        self.kind = np.array(kinds, dtype=int)
        self.lo = np.array(lo, dtype=float)
        self.hi = np.array(hi, dtype=float)
        self.flo = np.array(flo, dtype=float)
        self.fhi = np.array(fhi, dtype=float)
        self.sign = np.array(sign, dtype=int)
        mass = np.array(mass, dtype=float)
        self.total = float(mass.sum())
        self.cum = np.cumsum(mass) / self.total if self.total > 0 else mass

    def sample(self, count: int, rng: np.random.Generator):
        if count == 0:
            return np.empty(0), np.empty(0, dtype=int)
        idx = np.searchsorted(self.cum, rng.random(count), side="right")
        idx = np.minimum(idx, self.cum.size - 1)
        u = rng.random(count)
        fa, fb = self.flo[idx], self.fhi[idx]
        slope = fb - fa
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.where(np.abs(slope) > 1e-12 * np.maximum(fa, fb),
                         (-fa + np.sqrt(fa * fa + slope * u * (fa + fb))) / slope, u)
        r = np.where(self.kind[idx] == 0, self.lo[idx], self.lo[idx] + y * (self.hi[idx] - self.lo[idx]))
        return r, self.sign[idx]


def _draw_jump_times(rate: float, T: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        return np.empty(0)
    mean = rate * T
    batch = int(mean + 10 * math.sqrt(mean) + 10)
    times = np.cumsum(rng.exponential(1.0 / rate, batch))
    while times[-1] < T:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / rate, batch))
        times = np.concatenate([times, more])
    return times[times < T]


def _draw_jumps(params: MatrixEnsembleParams, T: float, rng: np.random.Generator) -> list[JumpEvent]:
    times = _draw_jump_times(params.jump_rate, T, rng)
    k = times.size
    if k == 0:
        return []
    r, sign = _JumpTable(params.sign_rule).sample(k, rng)
    g = rng.standard_normal((k, params.n)) + 1j * rng.standard_normal((k, params.n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return [JumpEvent(float(times[j]), float(r[j]), g[j], int(sign[j])) for j in range(k)]


@dataclass
class SkeletonPoint:
    """One recorded state of a path; ``pre`` is X(t-) at jump times."""

    time: float
    kind: str
    matrix: np.ndarray
    jump: JumpEvent | None = None
    pre: np.ndarray | None = None


def _check_path_args(params: MatrixEnsembleParams, T: float, n_grid: int):
    if not T > 0:
        raise DomainError("T must be positive")
    if int(n_grid) != n_grid or n_grid < 1:
        raise DomainError("n_grid must be a positive integer")
    if not math.isfinite(params.jump_rate):
        raise FiniteActivityError("infinite jump rate")
    if params.jump_rate * T > JUMP_GUARD:
        raise ResourceGuardError(
            f"expected {params.jump_rate * T:.3g} jumps exceeds the guard {JUMP_GUARD}")


def grid_times(T: float, n_grid: int) -> np.ndarray:
    g = np.arange(n_grid + 1) * (T / n_grid)
    g[-1] = T
    return g


def iter_path(params: MatrixEnsembleParams, T: float, n_grid: int, rng,
              keep_pre_jump: bool = True) -> Iterator[SkeletonPoint]:
    """Stream the skeleton of one path without keeping past matrices alive.

    Jump times, sizes, signs and directions are drawn first, then the
    Brownian increments between consecutive skeleton times; the stream is
    therefore a deterministic function of the generator state.
    """
    _check_path_args(params, T, n_grid)
    rng, _ = _as_rng(rng)
    n = params.n
    jumps = _draw_jumps(params, T, rng)
    grid = grid_times(T, n_grid)
    events = [(float(t), 0, None) for t in grid[1:]] + [(j.time, 1, j) for j in jumps]
    events.sort(key=lambda e: (e[0], e[1]))
    x = np.zeros((n, n), dtype=complex)
    yield SkeletonPoint(0.0, "grid", x.copy())
    scale = params.gaussian_scale
    drift = params.drift
    diag = np.diag_indices(n)
    t_prev = 0.0
    for time, is_jump, jump in events:
        dt = time - t_prev
        if dt > 0:
            if scale > 0:
                x += scale * _bm_dense(n, dt, rng)
            if drift != 0:
                x[diag] += drift * dt
            t_prev = time
        if is_jump:
            pre = x.copy() if keep_pre_jump else None
            x += jump.increment()
            _mirror_upper(x)
            yield SkeletonPoint(time, "jump", x.copy(), jump, pre)
        else:
            yield SkeletonPoint(time, "grid", x.copy())


@dataclass
class PathSample:
    params: MatrixEnsembleParams
    grid_times: np.ndarray
    jump_events: list
    times: np.ndarray
    kinds: list
    skeleton: list
    pre_jump: dict
    seed: int | None = None

    def matrix_at(self, t: float) -> HermitianMatrix:
        hits = np.flatnonzero(self.times == t)
        if hits.size == 0:
            raise DomainError(f"time {t} is not on the skeleton")
        return self.skeleton[int(hits[-1])]

    def jump_increments(self):
        """(event, X(t) - X(t-)) for every jump, as dense arrays."""
        for k, event in self.jump_events_by_index.items():
            yield event, self.skeleton[k].to_dense() - self.pre_jump[k].to_dense()

    @property
    def jump_events_by_index(self) -> dict:
        out, it = {}, iter(self.jump_events)
        for k, kind in enumerate(self.kinds):
            if kind == "jump":
                out[k] = next(it)
        return out

    def __eq__(self, other):
        if not isinstance(other, PathSample):
            return NotImplemented
        if not (np.array_equal(self.times, other.times) and self.kinds == other.kinds
                and self.seed == other.seed and len(self.jump_events) == len(other.jump_events)):
            return False
        for a, b in zip(self.jump_events, other.jump_events):
            if (a.time, a.r, a.sign) != (b.time, b.r, b.sign) or not np.array_equal(a.v, b.v):
                return False
        return all(a == b for a, b in zip(self.skeleton, other.skeleton))


def sample_path(params: MatrixEnsembleParams, T: float, n_grid: int, rng=None) -> PathSample:
    """Simulate one path and keep every skeleton matrix (packed).

    ``rng`` may be an integer seed or a ``numpy.random.Generator``.
    """
    gen, seed = _as_rng(rng)
    times, kinds, skel, jumps, pre = [], [], [], [], {}
    for k, pt in enumerate(iter_path(params, T, n_grid, gen)):
        times.append(pt.time)
        kinds.append(pt.kind)
        skel.append(HermitianMatrix.from_dense(pt.matrix))
        if pt.jump is not None:
            jumps.append(pt.jump)
            pre[k] = HermitianMatrix.from_dense(pt.pre)
    return PathSample(params, grid_times(T, n_grid), jumps, np.array(times), kinds, skel, pre, seed)


# -- export -------------------------------------------------------------------

def write_matrix_dump(path_or_file, matrices: Sequence) -> None:
    """Binary dump: 16-byte header (b"HLEV", version, n, count; little-endian u32)
    followed by each matrix's upper triangle, row-major, as (re, im) float64 pairs."""
    mats = [m if isinstance(m, HermitianMatrix) else HermitianMatrix.from_dense(m) for m in matrices]
    n = mats[0].n if mats else 0
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "wb") if own else path_or_file
    try:
        fh.write(DUMP_MAGIC + struct.pack("<III", DUMP_VERSION, n, len(mats)))
        for m in mats:
            if m.n != n:
                raise DomainError("all matrices in a dump must share n")
            fh.write(m.packed_floats().astype("<f8").tobytes())
    finally:
        if own:
            fh.close()


def read_matrix_dump(path_or_file) -> list[HermitianMatrix]:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "rb") if own else path_or_file
    try:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != DUMP_MAGIC:
            raise DomainError("not an HLEV matrix dump")
        version, n, count = struct.unpack("<III", head[4:])
        if version != DUMP_VERSION:
            raise DomainError(f"unsupported dump version {version}")
        per = n * (n + 1) // 2
        raw = np.frombuffer(fh.read(16 * per * count), dtype="<f8")
    finally:
        if own:
            fh.close()
    if raw.size != 2 * per * count:
        raise DomainError("truncated matrix dump")
    out = []
    iu = np.triu_indices(n)
    for k in range(count):
        chunk = raw[2 * per * k: 2 * per * (k + 1)]
        vals = chunk[0::2] + 1j * chunk[1::2]
        a = np.zeros((n, n), dtype=complex)
        a[iu] = vals
        out.append(HermitianMatrix(a.diagonal().real.copy(), a[np.triu_indices(n, 1)]))
    return out


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_path_csv(fh: io.TextIOBase, times, kinds, eigenvalues=None, matrix_refs=None) -> None:
    """Path export: ``time,event_type`` then n eigenvalues or a dump reference."""
    w = csv.writer(fh, lineterminator="\n")
    if eigenvalues is not None:
        n = len(eigenvalues[0]) if len(eigenvalues) else 0
        w.writerow(["time", "event_type"] + [f"lambda_{i + 1}" for i in range(n)])
        for t, k, ev in zip(times, kinds, eigenvalues):
            w.writerow([fmt(t), k] + [fmt(v) for v in ev])
    else:
        w.writerow(["time", "event_type", "matrix_ref"])
        for t, k, ref in zip(times, kinds, matrix_refs):
            w.writerow([fmt(t), k, ref])
