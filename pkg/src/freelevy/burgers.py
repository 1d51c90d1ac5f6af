"""Free Levy laws mu_t from the complex Burgers equation, solved by characteristics.

With mu_0 = delta_0 the Cauchy transform psi(t, z) = int (z - x)^-1 mu_t(dx)
satisfies

    d/dt psi = -d/dz psi * (sigma2*psi + eta + int (psi + r)/(1 - r psi) rho_rest(dr)),

and the bracket equals phi(1/psi) for the Voiculescu transform phi of the
pair.  Along characteristics this gives psi(t, z) = 1/u where u solves
``z = u + t*phi(u)`` on the branch with Im u > 0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from freelevy._backend import get_kernels
from freelevy.ensemble import fmt
from freelevy.errors import BranchError, DomainError, MomentDivergenceError
from freelevy.measures import GeneratingPair, free_cumulants

__all__ = [
    "SolverSettings",
    "LimitLaw",
    "CdfTable",
    "cauchy_transform",
    "density",
    "cdf",
    "quantile",
    "semicircle_density",
    "semicircle_cauchy",
    "mp_density",
    "mp_atom",
    "burgers_residual",
    "write_density_csv",
]

_STATUS = {1: "no convergence", 2: "left the upper half-plane", 3: "singular Jacobian"}


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-14
    ftol: float = 1e-12
    max_iter: int = 100
    n_steps: int = 8
    min_step: float = 1e-4
    eps_ladder: tuple = (1e-2, 5e-3, 2.5e-3)
    density_method: str = "boundary"
    cdf_tol: float = 1e-8
    backend: str | None = None

    def __post_init__(self):
        if not (self.tol > 0 and self.ftol > 0 and self.min_step > 0):
            raise DomainError("solver tolerances must be positive")
        if not 1 <= self.n_steps <= 64:
            raise DomainError("n_steps must lie in [1, 64]")
        if self.density_method not in ("boundary", "richardson"):
            raise DomainError(f"unknown density method {self.density_method!r}")
        if len(self.eps_ladder) < 1 or any(e <= 0 for e in self.eps_ladder):
            raise DomainError("eps ladder must be positive")


@dataclass(frozen=True)
class LimitLaw:
    """Law mu_t of the free Levy process with the given pair, started at delta_0."""

    pair: GeneratingPair
    t: float
    settings: SolverSettings = field(default_factory=SolverSettings)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not (self.t >= 0 and math.isfinite(self.t)):
            raise DomainError("t must be finite and nonnegative")
        object.__setattr__(self, "t", float(self.t))

    @property
    def is_dirac(self) -> bool:
        return self.t == 0.0 or self.pair.total_mass == 0.0

    @property
    def dirac_location(self) -> float:
        return self.t * self.pair.eta

    def at(self, t: float) -> "LimitLaw":
        return LimitLaw(self.pair, t, self.settings)

    def _kernel_args(self):
        nodes, weights = self.pair.quadrature()
        return self.pair.eta, self.pair.sigma2, np.ascontiguousarray(nodes), np.ascontiguousarray(weights)

    def table(self) -> "CdfTable":
        if "table" not in self._cache:
            self._cache["table"] = CdfTable.build(self)
        return self._cache["table"]

    # convenience wrappers
    def cauchy(self, z):
        return cauchy_transform(self, z)

    def density(self, x):
        return density(self, x)

    def cdf(self, x):
        return cdf(self, x)

    def quantile(self, q):
        return quantile(self, q)

    @property
    def atoms(self) -> tuple:
        if self.is_dirac:
            return (self.dirac_location,)
        tab = self.table()
        return (0.0,) if tab.atom_mass > 0 else ()


def _solve_u(law: LimitLaw, zeta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = law.settings
    eta, sigma2, nodes, weights = law._kernel_args()
    return get_kernels(s.backend).solve_characteristic(
        zeta, law.t, eta, sigma2, nodes, weights, s.tol, s.ftol, s.max_iter, s.n_steps, s.min_step)


def cauchy_transform(law: LimitLaw, z):
    """psi(t, z) = 1/u with ``z = u + t*phi(u)``, Im u > 0; vectorized over z."""
    zz = np.asarray(z, dtype=complex)
    if np.any(~(zz.imag > 0)):
        raise DomainError("Cauchy transform needs Im z > 0")
    flat = zz.ravel()
    if law.t == 0.0:
        out = 1.0 / flat
    else:
        u, status = _solve_u(law, flat)
        bad = np.flatnonzero(status != 0)
        if bad.size:
            k = int(bad[0])
            raise BranchError(f"characteristic solver failed ({_STATUS.get(int(status[k]), status[k])})",
                              z=complex(flat[k]), t=law.t, last_iterate=complex(u[k]))
        out = 1.0 / u
    out = out.reshape(zz.shape)
    return out[()] if np.ndim(z) == 0 else out


def _lagrange_at_zero(eps, values):
    eps = np.asarray(eps, dtype=float)
    out = np.zeros_like(values[0])
    for i, ei in enumerate(eps):
        w = 1.0
        for j, ej in enumerate(eps):
            if j != i:
                w *= (0.0 - ej) / (ei - ej)
        out = out + w * values[i]
    return out


def _richardson_density(law: LimitLaw, x: np.ndarray) -> np.ndarray:
    ladder = law.settings.eps_ladder
    vals = [-np.imag(cauchy_transform(law, x + 1j * e)) / math.pi for e in ladder]
    return _lagrange_at_zero(ladder, vals)


def _boundary_density(law: LimitLaw, x: np.ndarray):
    """Follow the root along the eps ladder down to the real axis.

    Returns (density, ok) where ``ok`` flags points whose final real-axis
    refinement converged.
    """
    s = law.settings
    eta, sigma2, nodes, weights = law._kernel_args()
    k = get_kernels(s.backend)
    ladder = sorted(s.eps_ladder, reverse=True)
    u, status = _solve_u(law, x + 1j * ladder[0])
    ok = status == 0
    for e in ladder[1:]:
        u2, st = k.refine_characteristic(x + 1j * e, u, law.t, eta, sigma2, nodes, weights,
                                         s.tol, s.ftol, s.max_iter, False)
        good = ok & (st == 0)
        u = np.where(good, u2, u)
        ok = good
    u0, st = k.refine_characteristic(x.astype(complex), u, law.t, eta, sigma2, nodes, weights,
                                     s.tol, s.ftol, 4 * s.max_iter, True)
    retry = np.flatnonzero(ok & (st != 0))
    if retry.size:
        # Roots that move on scales far below the ladder (e.g. near a 1/sqrt
        # singularity) need the ladder continued geometrically first.
        xr, ur = x[retry], u[retry]
        alive = np.ones(retry.size, dtype=bool)
        e = ladder[-1]
        floor = 1e-13 * max(1.0, float(np.max(np.abs(xr))))
        while e > floor:
            e *= 0.25
            u2, st2 = k.refine_characteristic(xr + 1j * e, ur, law.t, eta, sigma2, nodes, weights,
                                              s.tol, s.ftol, s.max_iter, False)
            alive &= st2 == 0
            ur = np.where(alive, u2, ur)
        u2, st2 = k.refine_characteristic(xr.astype(complex), ur, law.t, eta, sigma2, nodes, weights,
                                          s.tol, s.ftol, 4 * s.max_iter, True)
        fixed = alive & (st2 == 0)
        u0[retry[fixed]] = u2[fixed]
        st[retry[fixed]] = 0
    ok = ok & (st == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        atom_like = np.abs(u0) < 1e-8
        dens = np.where(atom_like, 0.0, np.imag(u0) / (np.abs(u0) ** 2 * math.pi))
    ok = ok | (atom_like & (st != 2))
    return np.maximum(dens, 0.0), ok


def density(law: LimitLaw, x):
    """Density of the absolutely continuous part of mu_t at real x.

    ``settings.density_method == "richardson"`` extrapolates
    -Im psi(x + i eps)/pi over the eps ladder to eps = 0;  ``"boundary"``
    (default) continues the characteristic root along the ladder onto the
    real axis and falls back to extrapolation where that fails.  Values in
    (-1e-8, 0) are clipped to 0.
    """
    xx = np.asarray(x, dtype=float)
    flat = xx.ravel()
    if law.is_dirac:
        out = np.zeros_like(flat)
    elif law.settings.density_method == "richardson":
        out = _richardson_density(law, flat)
    else:
        out, ok = _boundary_density(law, flat)
        if not np.all(ok):
            out = out.copy()
            out[~ok] = _richardson_density(law, flat[~ok])
    out = np.where((out < 0) & (out > -1e-8), 0.0, out).reshape(xx.shape)
    return out[()] if np.ndim(x) == 0 else out


@dataclass
class CdfTable:
    """Adaptive trapezoid integral of the density plus an optional atom at 0."""

    nodes: np.ndarray
    values: np.ndarray
    cumulative: np.ndarray
    atom_mass: float
    lo: float
    hi: float

    @classmethod
    def build(cls, law: LimitLaw, tol: float | None = None, n0: int = 513,
              max_depth: int = 40) -> "CdfTable":
        if law.is_dirac:
            raise DomainError("degenerate law has no density table")
        tol = law.settings.cdf_tol if tol is None else tol
        lo, hi = support_bracket(law)
        x = np.linspace(lo, hi, n0)
        f = density(law, x)
        span = hi - lo
        xs, fs = [x], [f]
        left, right, fl, fr = x[:-1], x[1:], f[:-1], f[1:]
        for _ in range(max_depth):
            if left.size == 0:
                break
            mid = 0.5 * (left + right)
            fm = density(law, mid)
            xs.append(mid)
            fs.append(fm)
            h = right - left
            err = 0.25 * h * np.abs(fl + fr - 2.0 * fm)
            # absolute budget per cell: keeps graded refinement finite at 1/sqrt edges
            split = (err > tol / n0) & (h > 1e-12 * span)
            left = np.concatenate([left[split], mid[split]])
            right = np.concatenate([mid[split], right[split]])
            fl = np.concatenate([fl[split], fm[split]])
            fr = np.concatenate([fm[split], fr[split]])
        x = np.concatenate(xs)
        f = np.concatenate(fs)
        order = np.argsort(x, kind="stable")
        x, f = x[order], f[order]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(x) * (f[:-1] + f[1:]))])
        deficit = 1.0 - cum[-1]
        atom = deficit if deficit > 1e-3 else 0.0
        return cls(x, f, cum, float(atom), float(lo), float(hi))

    @property
    def total_mass(self) -> float:
        return float(self.cumulative[-1] + self.atom_mass)

    def continuous_cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xn, f, c = self.nodes, self.values, self.cumulative
        i = np.clip(np.searchsorted(xn, x, side="right") - 1, 0, xn.size - 2)
        h = xn[i + 1] - xn[i]
        dx = np.clip(x - xn[i], 0.0, h)
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(h > 0, (f[i + 1] - f[i]) / h, 0.0)
        val = c[i] + dx * (f[i] + 0.5 * slope * dx)
        val = np.where(x < xn[0], 0.0, np.where(x >= xn[-1], c[-1], val))
        return val

    def __call__(self, x) -> np.ndarray:
        val = self.continuous_cdf(x) + np.where(np.asarray(x) >= 0.0, self.atom_mass, 0.0)
        return np.clip(val, 0.0, 1.0)

    def moment(self, k: int) -> float:
        x, f = self.nodes, self.values
        g = f * x ** k
        return float(np.sum(0.5 * np.diff(x) * (g[:-1] + g[1:])))

    def quantile(self, q, iters: int = 80) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        a = np.full(q.shape, self.lo)
        b = np.full(q.shape, self.hi)
        for _ in range(iters):
            m = 0.5 * (a + b)
            below = self(m) < q
            a = np.where(below, m, a)
            b = np.where(below, b, m)
        return b


def support_bracket(law: LimitLaw, zero_tol: float = 1e-10) -> tuple[float, float]:
    """Interval outside which the density is below ``zero_tol`` on a scan.

    Scans outward from mean -/+ 2 sd in half-sd steps and stops after four
    consecutive negligible values.
    """
    t = law.t
    try:
        k1, k2 = free_cumulants(law.pair, 2)
    except MomentDivergenceError:
        k1, k2 = law.pair.eta, law.pair.total_mass
    mean, sd = t * k1, math.sqrt(max(t * k2, 1e-300))
    ends = []
    for direction in (-1.0, 1.0):
        x = mean + direction * 2.0 * sd
        quiet = 0
        first_quiet = x
        for _ in range(400):
            if density(law, np.array([x]))[0] < zero_tol:
                if quiet == 0:
                    first_quiet = x
                quiet += 1
                if quiet == 4:
                    break
            else:
                quiet = 0
            x += direction * 0.5 * sd
        ends.append(first_quiet)
    lo, hi = ends
    if lo > 0.0:  # keep the only admissible atom location inside the table
        lo = -0.5 * sd
    if hi < 0.0:
        hi = 0.5 * sd
    return lo, hi


def cdf(law: LimitLaw, x):
    """Distribution function of mu_t, clipped to [0, 1].

    An atom is assumed only at 0 and only when the integrated density falls
    short of 1 by more than 1e-3.
    """
    xx = np.asarray(x, dtype=float)
    if law.is_dirac:
        out = np.where(xx >= law.dirac_location, 1.0, 0.0)
    else:
        out = law.table()(xx)
    return out[()] if np.ndim(x) == 0 else out


def quantile(law: LimitLaw, q):
    """Generalized inverse of :func:`cdf` by bisection."""
    qq = np.asarray(q, dtype=float)
    if law.is_dirac:
        out = np.full(qq.shape, law.dirac_location)
    else:
        out = law.table().quantile(qq)
    return out[()] if np.ndim(q) == 0 else out


# -- closed forms ---------------------------------------------------------------

def semicircle_density(t: float, x):
    """Wigner law of variance t: sqrt(4t - x^2)/(2 pi t) on |x| <= 2 sqrt(t)."""
    if not t > 0:
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    out = np.sqrt(np.maximum(4.0 * t - x * x, 0.0)) / (2.0 * math.pi * t)
    return out[()] if out.ndim == 0 else out


def semicircle_cauchy(t: float, z):
    """Cauchy transform (z - sqrt(z^2 - 4t))/(2t) on the Herglotz branch."""
    z = np.asarray(z, dtype=complex)
    r = 2.0 * math.sqrt(t)
    s = np.sqrt(z - r) * np.sqrt(z + r)
    out = (z - s) / (2.0 * t)
    return out[()] if out.ndim == 0 else out


def mp_atom(lam: float, t: float) -> float:
    """Mass (1 - lam t)^+ of the Marchenko-Pastur atom at 0."""
    return max(0.0, 1.0 - lam * t)


def mp_density(lam: float, t: float, x):
    """Marchenko-Pastur law with rate lam*t and jump size 1.

    Returns ``(density, atom)``: the absolutely continuous part at x and the
    mass (1 - lam t)^+ of the atom at 0.
    """
    if not (lam > 0 and t > 0):
        raise DomainError("lam and t must be positive")
    c = lam * t
    a, b = (1.0 - math.sqrt(c)) ** 2, (1.0 + math.sqrt(c)) ** 2
    x = np.asarray(x, dtype=float)
    inside = (x > a) & (x < b) & (x > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inside, np.sqrt(np.abs((b - x) * (x - a))) / (2.0 * math.pi * x), 0.0)
    return (out[()] if out.ndim == 0 else out), mp_atom(lam, t)


# -- verification -----------------------------------------------------------------

def burgers_residual(law: LimitLaw, z: complex, h: float = 1e-4) -> float:
    """|d_t psi + d_z psi * (sigma2 psi + eta + int (psi + r)/(1 - r psi) rho_rest(dr))|
    with central differences of step h in t and in z."""
    z = complex(z)
    if not z.imag > 2 * h:
        raise DomainError("need Im z > 2h")
    if not law.t > h:
        raise DomainError("need t > h")
    psi = cauchy_transform(law, z)
    dt = (cauchy_transform(law.at(law.t + h), z) - cauchy_transform(law.at(law.t - h), z)) / (2 * h)
    dz = (cauchy_transform(law, z + h) - cauchy_transform(law, z - h)) / (2 * h)
    p = law.pair
    nodes, weights = p.quadrature()
    coef = p.sigma2 * psi + p.eta + complex(np.sum(weights * (psi + nodes) / (1.0 - nodes * psi)))
    return float(abs(dt + dz * coef))


def write_density_csv(fh, laws, xs) -> None:
    """Density/CDF export with columns ``t,x,density,cdf``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "x", "density", "cdf"])
    xs = np.asarray(xs, dtype=float)
    for law in laws:
        dens = density(law, xs)
        cum = cdf(law, xs)
        for x, d, c in zip(xs, np.atleast_1d(dens), np.atleast_1d(cum)):
            w.writerow([fmt(law.t), fmt(x), fmt(d), fmt(c)])
