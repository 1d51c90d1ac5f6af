import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freelevy.burgers import (
    LimitLaw,
    SolverSettings,
    burgers_residual,
    cauchy_transform,
    cdf,
    density,
    mp_atom,
    mp_density,
    quantile,
    semicircle_cauchy,
    semicircle_density,
    write_density_csv,
)
from freelevy.errors import BranchError, DomainError
from freelevy.measures import (
    GeneratingPair,
    RealMeasure,
    free_cumulants,
    free_poisson_pair,
    mixed_pair,
    semicircle_pair,
)

from oracles import mp_cauchy, mp_moments
from oracles import semicircle_cauchy as oracle_semicircle_cauchy

ACCEPTANCE_PAIRS = {
    "semicircle": semicircle_pair(1.0),
    "free_poisson": free_poisson_pair(1.0),
    "mixed": mixed_pair(0.5, 0.5, 1.0),
}

upper_half_plane = st.builds(complex, st.floats(-8, 8), st.floats(0.05, 8))


# -- Cauchy transform ---------------------------------------------------------------

def test_time_zero_is_point_mass_at_origin():
    law = LimitLaw(mixed_pair(1.0, 2.0, 1.0), 0.0)
    assert cauchy_transform(law, 1j) == -1j
    z = np.array([1 + 2j, -3 + 0.1j])
    assert np.array_equal(cauchy_transform(law, z), 1 / z)


def test_semicircle_example_value():
    val = cauchy_transform(LimitLaw(semicircle_pair(1.0), 1.0), 2j)
    assert val == pytest.approx(1j * (1 - math.sqrt(2)), abs=1e-12)
    assert val == pytest.approx(-0.41421356j, abs=1e-8)


@given(st.floats(-5, 5), upper_half_plane)
def test_pure_drift_is_translation(c, z):
    law = LimitLaw(GeneratingPair(c), 1.0)
    assert abs(cauchy_transform(law, z) - 1 / (z - c)) <= 1e-12 * max(1.0, abs(1 / (z - c)))


def test_semicircle_transform_matches_closed_form_at_random_points():
    rng = np.random.default_rng(4)
    z = rng.uniform(-4, 4, 100) + 1j * rng.uniform(0.01, 4, 100)
    got = cauchy_transform(LimitLaw(semicircle_pair(1.0), 1.0), z)
    assert np.max(np.abs(got - oracle_semicircle_cauchy(1.0, z))) <= 1e-10


@pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
def test_free_poisson_transform_matches_closed_form(t):
    rng = np.random.default_rng(int(10 * t))
    z = rng.uniform(-2, 6, 50) + 1j * rng.uniform(0.01, 3, 50)
    got = cauchy_transform(LimitLaw(free_poisson_pair(1.0), t), z)
    assert np.max(np.abs(got - mp_cauchy(t, z))) <= 1e-10


@pytest.mark.parametrize("name", sorted(ACCEPTANCE_PAIRS))
def test_herglotz_and_decay(name):
    law = LimitLaw(ACCEPTANCE_PAIRS[name], 1.0)
    xs, ys = np.meshgrid(np.linspace(-5, 6, 23), [0.01, 0.1, 1.0, 10.0])
    assert np.all(cauchy_transform(law, xs + 1j * ys).imag < 0)
    z = 1e6j
    assert abs(z * cauchy_transform(law, z) - 1) <= 1e-4


def test_characteristic_equation_holds():
    from freelevy.measures import voiculescu_phi

    pair = mixed_pair(0.5, 0.5, 1.0)
    law = LimitLaw(pair, 0.8)
    z = np.array([0.3 + 0.2j, 2.0 + 1e-3j, -1 + 3j])
    u = 1 / cauchy_transform(law, z)
    assert np.all(u.imag > 0)
    assert np.max(np.abs(u + 0.8 * voiculescu_phi(pair, u) - z)) <= 1e-12 * np.max(np.abs(z))


@given(st.floats(-3, 3).filter(lambda r: abs(r) > 1e-3), upper_half_plane)
def test_pde_drift_coefficient_equals_phi_at_inverse_transform(r, u):
    w = 1 / u
    assert abs((w + r) / (1 - r * w) - (1 + r * u) / (u - r)) <= 1e-9 * (1 + abs((1 + r * u) / (u - r)))


def test_branch_error_carries_diagnostics():
    settings = SolverSettings(max_iter=1, n_steps=1, min_step=0.5)
    law = LimitLaw(free_poisson_pair(1.0), 1.0, settings)
    with pytest.raises(BranchError) as info:
        cauchy_transform(law, 0.05 + 1e-6j)
    diag = info.value.diagnostics()
    assert {"z", "t", "last_iterate"} <= set(diag)
    assert diag["t"] == 1.0


def test_domain_errors():
    law = LimitLaw(semicircle_pair(1.0), 1.0)
    with pytest.raises(DomainError):
        cauchy_transform(law, 1.0 + 0j)
    with pytest.raises(DomainError):
        LimitLaw(semicircle_pair(1.0), -1.0)
    with pytest.raises(DomainError):
        SolverSettings(n_steps=65)
    with pytest.raises(DomainError):
        SolverSettings(tol=0.0)


# -- densities ------------------------------------------------------------------------

def test_density_examples():
    sc = LimitLaw(semicircle_pair(1.0), 1.0)
    assert density(sc, 0.0) == pytest.approx(1 / math.pi, abs=1e-10)
    assert density(sc, 3.0) == 0.0
    mp = LimitLaw(free_poisson_pair(1.0), 1.0)
    assert density(mp, 1.0) == pytest.approx(math.sqrt(3) / (2 * math.pi), abs=1e-10)


def test_closed_form_examples():
    assert semicircle_density(1.0, 0.0) == pytest.approx(1 / math.pi, abs=1e-16)
    assert semicircle_density(1.0, 2.0) == 0.0 and semicircle_density(1.0, -2.0) == 0.0
    assert semicircle_density(4.0, 0.0) == pytest.approx(1 / (2 * math.pi), abs=1e-16)
    with pytest.raises(DomainError):
        semicircle_density(0.0, 0.0)
    d, atom = mp_density(1.0, 1.0, 1.0)
    assert d == pytest.approx(math.sqrt(3) / (2 * math.pi), abs=1e-16) and atom == 0.0
    assert mp_density(1.0, 1.0, 4.5)[0] == 0.0
    assert mp_density(0.5, 1.0, 1.0)[1] == 0.5 == mp_atom(1.0, 0.5)
    assert semicircle_cauchy(1.0, 2j) == pytest.approx(1j * (1 - math.sqrt(2)), abs=1e-15)


@pytest.mark.parametrize("lam,t", [(1.0, 0.5), (0.7, 3.0), (2.0, 1.0)])
def test_mp_closed_form_moments(lam, t):
    x = np.linspace(0, (1 + math.sqrt(lam * t)) ** 2, 400_001)
    d, atom = mp_density(lam, t, x)
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] *= 0.5
    assert np.sum(w * d) + atom == pytest.approx(1.0, abs=2e-3)
    ref = mp_moments(lam * t, 3)
    for k in (1, 2, 3):
        assert np.sum(w * d * x ** k) == pytest.approx(ref[k - 1], rel=1e-4)


def test_semicircle_density_sup_error_on_grid():
    x = np.linspace(-3, 3, 601)
    err = np.max(np.abs(density(LimitLaw(semicircle_pair(1.0), 1.0), x) - semicircle_density(1.0, x)))
    assert err <= 1e-6


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_free_poisson_density_sup_error_on_grid(t):
    x = np.linspace(-1, 7, 601)
    err = np.max(np.abs(density(LimitLaw(free_poisson_pair(1.0), t), x) - mp_density(1.0, t, x)[0]))
    assert err <= 1e-6


def test_richardson_option_in_the_bulk():
    s = SolverSettings(density_method="richardson")
    sc = LimitLaw(semicircle_pair(1.0), 1.0, s)
    assert density(sc, 0.0) == pytest.approx(1 / math.pi, abs=1e-8)
    mp = LimitLaw(free_poisson_pair(1.0), 1.0, s)
    assert density(mp, 2.0) == pytest.approx(mp_density(1.0, 1.0, 2.0)[0], abs=1e-8)


@pytest.mark.parametrize("name", sorted(ACCEPTANCE_PAIRS))
def test_density_is_nonnegative(name):
    law = LimitLaw(ACCEPTANCE_PAIRS[name], 1.0)
    assert np.all(density(law, np.linspace(-4, 6, 301)) >= 0)


# -- cdf and quantiles ------------------------------------------------------------------------

def test_cdf_examples():
    sc = LimitLaw(semicircle_pair(1.0), 1.0)
    assert cdf(sc, 0.0) == pytest.approx(0.5, abs=1e-8)
    assert abs(cdf(sc, 2.0) - 1.0) <= 1e-4
    mp = LimitLaw(free_poisson_pair(0.5), 1.0)
    assert cdf(mp, -1e-9) <= 1e-12
    assert cdf(mp, 0.0) == pytest.approx(0.5, abs=1e-6)
    assert mp.atoms == (0.0,)
    assert LimitLaw(free_poisson_pair(1.0), 1.0).atoms == ()


def test_dirac_law_cdf_and_quantile():
    law = LimitLaw(GeneratingPair(2.0), 1.5)
    assert cdf(law, 2.999) == 0.0 and cdf(law, 3.0) == 1.0
    assert quantile(law, 0.3) == 3.0


@pytest.mark.parametrize("name", sorted(ACCEPTANCE_PAIRS))
@pytest.mark.parametrize("t", [0.5, 1.0])
def test_normalization_monotonicity_and_moments(name, t):
    pair = ACCEPTANCE_PAIRS[name]
    law = LimitLaw(pair, t)
    tab = law.table()
    assert 1 - 1e-4 <= cdf(law, tab.hi) <= 1 + 1e-6
    xs = np.linspace(tab.lo - 1, tab.hi + 1, 2001)
    c = cdf(law, xs)
    assert np.all(np.diff(c) >= 0) and c[0] == 0.0
    k1, k2 = free_cumulants(pair, 2)
    assert tab.moment(1) == pytest.approx(t * k1, abs=1e-4)
    assert tab.moment(2) == pytest.approx(t * k2 + (t * k1) ** 2, abs=1e-4)


def test_quantile_inverts_cdf():
    law = LimitLaw(semicircle_pair(1.0), 1.0)
    q = np.array([0.01, 0.25, 0.5, 0.9])
    assert np.max(np.abs(cdf(law, quantile(law, q)) - q)) <= 1e-8
    # cdf is accurate to about 1e-8, which moves the median by at most that over the density 1/pi
    assert quantile(law, 0.5) == pytest.approx(0.0, abs=1e-7)


def test_mixed_law_has_no_atom():
    assert LimitLaw(mixed_pair(0.5, 0.5, 1.0), 1.0).table().atom_mass == 0.0


# -- PDE residual ---------------------------------------------------------------------------

def test_residual_examples():
    assert burgers_residual(LimitLaw(GeneratingPair(1.3), 1.0), 0.5 + 1j) <= 1e-8
    assert burgers_residual(LimitLaw(semicircle_pair(1.0), 1.0), 1 + 2j) <= 1e-6
    assert burgers_residual(LimitLaw(free_poisson_pair(1.0), 0.7), 2 + 1j) <= 1e-6
    with pytest.raises(DomainError):
        burgers_residual(LimitLaw(semicircle_pair(1.0), 1.0), 1 + 1e-4j)


@pytest.mark.parametrize("name", sorted(ACCEPTANCE_PAIRS))
def test_residual_at_random_interior_points(name):
    rng = np.random.default_rng(sorted(ACCEPTANCE_PAIRS).index(name))
    pair = ACCEPTANCE_PAIRS[name]
    for _ in range(20):
        z = complex(rng.uniform(-3, 3), rng.uniform(0.5, 3))
        t = rng.uniform(0.1, 2)
        assert burgers_residual(LimitLaw(pair, t), z) <= 1e-6


def test_residual_detects_a_wrong_law():
    # the semicircle transform does not solve the equation with free Poisson data
    law = LimitLaw(semicircle_pair(1.0), 1.0)
    z, h = 1 + 2j, 1e-4
    psi = cauchy_transform(law, z)
    dt = (cauchy_transform(law.at(1 + h), z) - cauchy_transform(law.at(1 - h), z)) / (2 * h)
    dz = (cauchy_transform(law, z + h) - cauchy_transform(law, z - h)) / (2 * h)
    fp = free_poisson_pair(1.0)
    coef = fp.eta + 0.5 * (psi + 1) / (1 - psi)
    assert abs(dt + dz * coef) > 1e-2


# -- export ------------------------------------------------------------------------------------

def test_density_csv_layout():
    laws = [LimitLaw(semicircle_pair(1.0), t) for t in (0.5, 1.0)]
    buf = io.StringIO()
    write_density_csv(buf, laws, [0.0, 3.0])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x,density,cdf"
    assert len(lines) == 5
    t, x, d, c = lines[3].split(",")
    assert (t, x) == ("1", "0")
    assert float(d) == pytest.approx(1 / math.pi, abs=1e-10)
    assert float(c) == pytest.approx(0.5, abs=1e-8)
    assert lines[4].split(",")[2] == "0"
    assert float(lines[4].split(",")[3]) == pytest.approx(1.0, abs=1e-6)
