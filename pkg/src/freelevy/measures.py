"""Finite measures on the real line and the classical/free Levy correspondence.

A :class:`RealMeasure` is a finite list of atoms plus an optional density
sampled on a uniform grid (integrated with the trapezoid rule).  Every
integral in the package goes through :meth:`RealMeasure.quadrature`, so the
cutoff conventions below are applied identically everywhere.

Conventions
-----------
* ``ClassicalTriplet.gamma`` is the drift relative to the truncation
  ``1{|x| <= 1}``, i.e. the characteristic exponent is
  ``i*gamma*u - sigma2*u**2/2 + int (e^{iux} - 1 - iux 1{|x|<=1}) nu(dx)``.
* ``GeneratingPair`` stores the atom of ``rho`` at the origin in ``sigma2``
  and the rest of ``rho`` in ``rho_rest``.  The Voiculescu transform is
  ``phi(z) = eta + int (1 + t z)/(z - t) rho(dt)``.

With these conventions the map :func:`bp_to_free` sends classical cumulants
to equal free cumulants, which is checked in the test-suite.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from freelevy.errors import DomainError, InvalidMeasureError, MomentDivergenceError

ATOM_TOL = 1e-12
DEFAULT_SAMPLES = 4096

__all__ = [
    "Density",
    "RealMeasure",
    "GeneratingPair",
    "ClassicalTriplet",
    "bp_to_free",
    "bp_to_classical",
    "voiculescu_phi",
    "voiculescu_phi_prime",
    "free_cumulants",
    "classical_cumulants",
    "poisson_triplet",
    "semicircle_pair",
    "free_poisson_pair",
    "mixed_pair",
    "parse_preset",
    "pair_from_spec",
]


@dataclass(frozen=True)
class Density:
    """Nonnegative density sampled at ``len(samples)`` equispaced nodes on [lo, hi]."""

    lo: float
    hi: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise InvalidMeasureError("density needs at least two samples")
        if not self.lo < self.hi:
            raise InvalidMeasureError(f"density support [{self.lo}, {self.hi}] is empty")
        if np.any(np.isnan(s)) or np.any(s < 0):
            raise InvalidMeasureError("density samples must be nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "samples", s)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.samples.size - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.samples.size)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.samples.size, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w

    def same_grid(self, other: "Density") -> bool:
        return (self.lo, self.hi, self.samples.size) == (other.lo, other.hi, other.samples.size)


def _merge_atoms(pairs: Iterable[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    merged: list[list[float]] = []
    for loc, mass in sorted((float(a), float(b)) for a, b in pairs):
        if merged and abs(loc - merged[-1][0]) <= ATOM_TOL:
            merged[-1][1] += mass
        else:
            merged.append([loc, mass])
    return tuple((loc, mass) for loc, mass in merged if mass != 0.0)


@dataclass(frozen=True)
class RealMeasure:
    """Finite measure = atoms + optional trapezoid-integrated density."""

    atoms: tuple[tuple[float, float], ...] = ()
    density: Density | None = None

    def __post_init__(self):
        atoms = tuple((float(a), float(b)) for a, b in self.atoms)
        for loc, mass in atoms:
            if not (math.isfinite(loc) and math.isfinite(mass)):
                raise InvalidMeasureError("atoms must be finite")
            if mass < 0:
                raise InvalidMeasureError(f"negative atom mass {mass} at {loc}")
        locs = sorted(loc for loc, _ in atoms)
        if any(b - a <= ATOM_TOL for a, b in zip(locs, locs[1:])):
            raise InvalidMeasureError("atom locations must be pairwise distinct")
        object.__setattr__(self, "atoms", atoms)
        if not math.isfinite(self.total_mass()):
            raise InvalidMeasureError("total mass is not finite")

    # -- construction ---------------------------------------------------
    @classmethod
    def zero(cls) -> "RealMeasure":
        return cls()

    @classmethod
    def from_atoms(cls, locations: Sequence[float], masses: Sequence[float]) -> "RealMeasure":
        return cls(atoms=_merge_atoms(zip(locations, masses)))

    @classmethod
    def dirac(cls, loc: float, mass: float = 1.0) -> "RealMeasure":
        return cls(atoms=((loc, mass),))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                      n_samples: int = DEFAULT_SAMPLES) -> "RealMeasure":
        x = np.linspace(lo, hi, n_samples)
        return cls(density=Density(lo, hi, np.asarray(f(x), dtype=float)))

    # -- queries --------------------------------------------------------
    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights such that ``int f dmu = sum(w * f(nodes))``."""
        locs = np.array([a for a, _ in self.atoms], dtype=float)
        mass = np.array([b for _, b in self.atoms], dtype=float)
        if self.density is None:
            return locs, mass
        d = self.density
        return (np.concatenate([locs, d.nodes]),
                np.concatenate([mass, d.samples * d.trapezoid_weights()]))

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        x, w = self.quadrature()
        if x.size == 0:
            return 0.0
        with np.errstate(all="ignore"):
            vals = np.asarray(f(x), dtype=float)
            terms = np.where(w == 0.0, 0.0, w * vals)
        return float(np.sum(terms))

    def total_mass(self) -> float:
        mass = math.fsum(b for _, b in self.atoms)
        if self.density is not None:
            d = self.density
            mass += float(np.sum(d.samples * d.trapezoid_weights()))
        return mass

    def is_zero(self) -> bool:
        return not self.atoms and (self.density is None or not np.any(self.density.samples))

    def atom_mass_at(self, loc: float, tol: float = ATOM_TOL) -> float:
        return math.fsum(b for a, b in self.atoms if abs(a - loc) <= tol)

    # -- transformations ------------------------------------------------
    def reweighted(self, g: Callable[[np.ndarray], np.ndarray]) -> "RealMeasure":
        """Measure ``g(x) mu(dx)``; zero mass stays zero even where g blows up."""
        with np.errstate(all="ignore"):
            atoms = []
            for loc, mass in self.atoms:
                val = float(g(np.array([loc]))[0])
                atoms.append((loc, 0.0 if mass == 0.0 else mass * val))
            density = None
            if self.density is not None:
                d = self.density
                s = np.where(d.samples == 0.0, 0.0, d.samples * g(d.nodes))
                if not np.all(np.isfinite(s)):
                    raise InvalidMeasureError("reweighted density is not finite")
                density = Density(d.lo, d.hi, s)
        return RealMeasure(_merge_atoms(atoms), density)

    def restricted(self, keep: Callable[[np.ndarray], np.ndarray]) -> "RealMeasure":
        """Restriction to the set where ``keep`` is true (density samples zeroed)."""
        return self.reweighted(lambda x: np.where(keep(x), 1.0, 0.0))

    def scaled(self, c: float) -> "RealMeasure":
        return self.reweighted(lambda x: np.full_like(x, c, dtype=float))

    def __add__(self, other: "RealMeasure") -> "RealMeasure":
        if not isinstance(other, RealMeasure):
            return NotImplemented
        if self.density is None or other.density is None:
            density = self.density if other.density is None else other.density
        elif self.density.same_grid(other.density):
            d = self.density
            density = Density(d.lo, d.hi, d.samples + other.density.samples)
        else:
            raise InvalidMeasureError("cannot add densities on different grids")
        return RealMeasure(_merge_atoms(self.atoms + other.atoms), density)

    def allclose(self, other: "RealMeasure", atol: float = ATOM_TOL) -> bool:
        a, b = self.atoms, other.atoms
        if len(a) != len(b):
            return False
        for (la, ma), (lb, mb) in zip(a, b):
            if abs(la - lb) > atol or abs(ma - mb) > atol:
                return False
        if (self.density is None) != (other.density is None):
            return False
        if self.density is not None:
            if not self.density.same_grid(other.density):
                return False
            return bool(np.allclose(self.density.samples, other.density.samples, rtol=0, atol=atol))
        return True

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        out: dict = {"atoms": [[loc, mass] for loc, mass in self.atoms]}
        if self.density is not None:
            d = self.density
            out["density"] = {"lo": d.lo, "hi": d.hi, "samples": d.samples.tolist()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RealMeasure":
        atoms = _merge_atoms((loc, mass) for loc, mass in data.get("atoms", []))
        density = None
        if data.get("density") is not None:
            d = data["density"]
            density = Density(d["lo"], d["hi"], np.asarray(d["samples"], dtype=float))
        return cls(atoms, density)


@dataclass(frozen=True)
class GeneratingPair:
    """Generating pair ``(eta, rho)`` with ``rho = sigma2*delta_0 + rho_rest``."""

    eta: float
    sigma2: float = 0.0
    rho_rest: RealMeasure = field(default_factory=RealMeasure)

    def __post_init__(self):
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not math.isfinite(self.eta):
            raise InvalidMeasureError("eta must be finite")
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise InvalidMeasureError("sigma2 must be finite and nonnegative")
        if self.rho_rest.atom_mass_at(0.0) > 0:
            raise InvalidMeasureError("rho_rest must not carry an atom at 0; use sigma2")

    @property
    def total_mass(self) -> float:
        return self.sigma2 + self.rho_rest.total_mass()

    def __add__(self, other: "GeneratingPair") -> "GeneratingPair":
        return GeneratingPair(self.eta + other.eta, self.sigma2 + other.sigma2,
                              self.rho_rest + other.rho_rest)

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        return self.rho_rest.quadrature()

    def to_dict(self) -> dict:
        return {"eta": self.eta, "sigma2": self.sigma2, **self.rho_rest.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratingPair":
        return cls(data["eta"], data.get("sigma2", 0.0), RealMeasure.from_dict(data))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ClassicalTriplet:
    """Levy triplet ``(sigma2, gamma, nu)``; gamma relative to ``1{|x|<=1}``."""

    sigma2: float
    gamma: float
    nu: RealMeasure = field(default_factory=RealMeasure)

    def __post_init__(self):
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "gamma", float(self.gamma))
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise InvalidMeasureError("sigma2 must be finite and nonnegative")
        if not math.isfinite(self.gamma):
            raise InvalidMeasureError("gamma must be finite")
        if self.nu.atom_mass_at(0.0) > 0:
            raise InvalidMeasureError("Levy measure must not charge 0")
        small = self.nu.integrate(lambda x: np.minimum(1.0, x * x))
        if not math.isfinite(small):
            raise InvalidMeasureError("int (1 ^ x^2) nu(dx) is not finite")

    def to_dict(self) -> dict:
        return {"sigma2": self.sigma2, "gamma": self.gamma, **self.nu.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "ClassicalTriplet":
        return cls(data["sigma2"], data["gamma"], RealMeasure.from_dict(data))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _inside_unit(x):
    return np.abs(x) <= 1.0


def bp_to_free(t: ClassicalTriplet) -> GeneratingPair:
    """Bercovici-Pata image of a classical triplet.

    ``rho = sigma2*delta_0 + x^2/(1+x^2) nu`` and
    ``eta = gamma - int x (1{|x|<=1} - 1/(1+x^2)) nu(dx)``.
    """
    rho_rest = t.nu.reweighted(lambda x: x * x / (1.0 + x * x))
    shift = t.nu.integrate(lambda x: x * (np.where(_inside_unit(x), 1.0, 0.0) - 1.0 / (1.0 + x * x)))
    if not math.isfinite(shift):
        raise InvalidMeasureError("drift correction integral diverges")
    return GeneratingPair(t.gamma - shift, t.sigma2, rho_rest)


def _check_no_mass_near_zero(m: RealMeasure, what: str):
    if m.density is None:
        return
    d = m.density
    near = np.abs(d.nodes) < d.step
    if np.any(d.samples[near] > 0):
        raise InvalidMeasureError(f"{what}: density charges a neighbourhood of 0, "
                                  "(1+x^2)/x^2 is not integrable there")


def bp_to_classical(p: GeneratingPair) -> ClassicalTriplet:
    """Inverse Bercovici-Pata map: ``nu = (1+x^2)/x^2 rho`` off 0, gamma from the pair."""
    _check_no_mass_near_zero(p.rho_rest, "bp_to_classical")
    nu = p.rho_rest.reweighted(lambda x: (1.0 + x * x) / (x * x))
    rho = p.rho_rest
    gamma = (p.eta
             + rho.integrate(lambda r: np.where(_inside_unit(r), r, 0.0))
             - rho.integrate(lambda r: np.where(_inside_unit(r), 0.0, 1.0 / r)))
    return ClassicalTriplet(p.sigma2, gamma, nu)


def _check_upper(z):
    z = np.asarray(z, dtype=complex)
    if np.any(~(z.imag > 0)):
        raise DomainError("Voiculescu transform needs Im z > 0")
    return z


def voiculescu_phi(p: GeneratingPair, z):
    """``eta + sigma2/z + int (1 + t z)/(z - t) rho_rest(dt)`` for Im z > 0."""
    zz = _check_upper(z)
    nodes, w = p.quadrature()
    out = p.eta + p.sigma2 / zz
    if nodes.size:
        zc = zz[..., None]
        out = out + np.sum(w * (1.0 + nodes * zc) / (zc - nodes), axis=-1)
    return out[()] if np.ndim(z) == 0 else out


def voiculescu_phi_prime(p: GeneratingPair, z):
    """Derivative of :func:`voiculescu_phi` in z."""
    zz = _check_upper(z)
    nodes, w = p.quadrature()
    out = -p.sigma2 / zz ** 2
    if nodes.size:
        zc = zz[..., None]
        out = out - np.sum(w * (1.0 + nodes ** 2) / (zc - nodes) ** 2, axis=-1)
    return out[()] if np.ndim(z) == 0 else out


def _finite_or_raise(values, what):
    for m, v in enumerate(values, start=1):
        if not math.isfinite(v):
            raise MomentDivergenceError(f"{what} of order {m} diverges")
    return values


def free_cumulants(p: GeneratingPair, m_max: int) -> list[float]:
    """Free cumulants from the large-z expansion of the Voiculescu transform.

    kappa_1 = eta + int t rho(dt); kappa_m = int t^(m-2) (1+t^2) rho(dt), m >= 2.
    """
    if m_max < 1:
        raise DomainError("m_max must be >= 1")
    rho = p.rho_rest
    out = [p.eta + rho.integrate(lambda t: t)]
    for m in range(2, m_max + 1):
        k = rho.integrate(lambda t, m=m: t ** (m - 2) * (1.0 + t * t))
        out.append(k + (p.sigma2 if m == 2 else 0.0))
    return _finite_or_raise(out, "free cumulant")


def classical_cumulants(t: ClassicalTriplet, m_max: int) -> list[float]:
    """Cumulants c_1..c_m of the classical law under the 1{|x|<=1} convention."""
    if m_max < 2:
        raise DomainError("m_max must be >= 2")
    nu = t.nu
    out = [t.gamma + nu.integrate(lambda x: np.where(_inside_unit(x), 0.0, x)),
           t.sigma2 + nu.integrate(lambda x: x * x)]
    for m in range(3, m_max + 1):
        out.append(nu.integrate(lambda x, m=m: x ** m))
    return _finite_or_raise(out, "classical cumulant")


# -- presets ------------------------------------------------------------------

def poisson_triplet(lam: float, jump: float = 1.0) -> ClassicalTriplet:
    """Compound Poisson law with rate ``lam`` and fixed jump size ``jump``."""
    if lam < 0 or jump == 0:
        raise DomainError("Poisson preset needs lam >= 0 and a nonzero jump")
    gamma = lam * jump if abs(jump) <= 1 else 0.0
    nu = RealMeasure.dirac(jump, lam) if lam > 0 else RealMeasure()
    return ClassicalTriplet(0.0, gamma, nu)


def semicircle_pair(sigma2: float = 1.0) -> GeneratingPair:
    return GeneratingPair(0.0, sigma2)


def free_poisson_pair(lam: float = 1.0) -> GeneratingPair:
    """Free Poisson pair, defined as the image of classical Poisson(lam)."""
    return bp_to_free(poisson_triplet(lam))


def mixed_pair(sigma2: float, lam: float, jump_size: float = 1.0) -> GeneratingPair:
    """Semicircular part of variance sigma2 plus free Poisson(lam) with the given jump."""
    jumps = bp_to_free(poisson_triplet(lam, jump_size))
    return GeneratingPair(jumps.eta, sigma2, jumps.rho_rest)


_PRESETS = {"semicircle": semicircle_pair, "free_poisson": free_poisson_pair, "mixed": mixed_pair}


def parse_preset(text: str) -> GeneratingPair:
    """Parse ``name:arg1,arg2`` (e.g. ``semicircle:1``, ``mixed:0.5,0.5,1``)."""
    name, _, args = text.partition(":")
    if name not in _PRESETS:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    values = [float(a) for a in args.split(",") if a.strip()] if args else []
    try:
        return _PRESETS[name](*values)
    except TypeError as exc:
        raise DomainError(f"bad arguments for preset {name!r}: {args!r}") from exc


def pair_from_spec(spec) -> GeneratingPair:
    """Accept a preset string, ``{"preset": name, "args": [...]}`` or an inline pair."""
    if isinstance(spec, GeneratingPair):
        return spec
    if isinstance(spec, str):
        return parse_preset(spec)
    if isinstance(spec, dict) and "preset" in spec:
        args = ",".join(str(a) for a in spec.get("args", []))
        return parse_preset(f"{spec['preset']}:{args}" if args else spec["preset"])
    if isinstance(spec, dict):
        return GeneratingPair.from_dict(spec)
    raise DomainError(f"cannot interpret pair spec {spec!r}")
