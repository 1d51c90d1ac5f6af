import io
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freelevy.ensemble import (
    HermitianMatrix,
    build_matrix_params,
    iter_path,
    read_matrix_dump,
    replica_rng,
    sample_haar_vector,
    sample_hermitian_bm_increment,
    sample_path,
    truncation_radius,
    write_matrix_dump,
    write_path_csv,
)
from freelevy.errors import DomainError, FiniteActivityError, ResourceGuardError
from freelevy.measures import (
    GeneratingPair,
    RealMeasure,
    free_cumulants,
    free_poisson_pair,
    mixed_pair,
    semicircle_pair,
)
from freelevy.spectral import EmpiricalMeasure, eigvalsh, kolmogorov_distance

from oracles import random_unitary, semicircle_cdf


# -- parameters -----------------------------------------------------------------

def test_params_gaussian_only():
    p = build_matrix_params(semicircle_pair(1.0), 2)
    assert p.sigma_n2 == 1.25
    assert p.radial.is_zero() and p.jump_rate == 0.0


def test_truncation_radius_examples():
    assert truncation_radius(16, 0.25) == pytest.approx(4.0, abs=1e-15)
    assert truncation_radius(1, 0.25) == math.inf
    assert build_matrix_params(free_poisson_pair(1.0), 1).r_max == math.inf


def test_params_free_poisson():
    p = build_matrix_params(free_poisson_pair(1.0), 10)
    assert p.radial.atoms == ((1.0, 1.0),)
    assert p.jump_rate == pytest.approx(10.0, abs=1e-14)
    assert p.sigma_n2 == pytest.approx(9 / 100, abs=0)
    # gamma = eta + 1/2 (atom inside the unit ball), compensator 1 -> no net drift
    assert p.gamma == pytest.approx(1.0, abs=1e-15)
    assert p.drift == pytest.approx(0.0, abs=1e-15)


@given(st.integers(1, 500), st.floats(0.0, 5.0))
def test_sigma_n2_formula(n, s2):
    p = build_matrix_params(semicircle_pair(s2), n)
    assert p.sigma_n2 == s2 + (n - 1) / n ** 2


def test_radial_support_is_cut_at_r_max():
    pair = GeneratingPair(0.0, 0.0, RealMeasure.from_atoms([1.0, 10.0], [0.5, 0.5]))
    p = build_matrix_params(pair, 16, 0.25)  # r_max = 4
    assert [loc for loc, _ in p.radial.atoms] == [1.0]
    assert p.jump_rate == pytest.approx(16 * 1.0)


def test_folded_negative_side_carries_sign():
    pair = GeneratingPair(0.0, 0.0, RealMeasure.from_atoms([-2.0, 0.5], [0.4, 0.2]))
    p = build_matrix_params(pair, 20)
    assert p.sign_rule.negative.atoms == ((2.0, 0.4 * 5 / 4),)
    assert p.sign_rule.positive.atoms == ((0.5, 0.2 * 1.25 / 0.25),)
    path = sample_path(p, 1.0, 2, 5)
    signs = {(ev.r, ev.sign) for ev in path.jump_events}
    assert signs <= {(2.0, -1), (0.5, 1)}
    assert {s for _, s in signs} == {-1, 1}


def test_density_at_zero_violates_finite_activity():
    rho = RealMeasure.from_function(lambda x: np.exp(-x * x), -2.0, 2.0, 401)
    with pytest.raises(FiniteActivityError):
        build_matrix_params(GeneratingPair(0.0, 0.0, rho), 10)


@pytest.mark.parametrize("eps", [0.05, 2.0])
def test_eps_truncation_keeps_mean_and_is_flagged(eps):
    rho = RealMeasure.from_function(lambda x: np.where(x > 0, np.exp(-x), 0.0), 0.0, 3.0, 3001)
    pair = GeneratingPair(0.1, 0.0, rho)
    p = build_matrix_params(pair, 50, eps=eps)
    assert p.metadata["eps_truncation"] == eps
    assert p.metadata["dropped_mass"] > 0
    assert math.isfinite(p.jump_rate)
    # mean of the normalised trace per unit time = drift + signed mean jump mass
    mean_jump = p.sign_rule.positive.integrate(lambda r: r) - p.sign_rule.negative.integrate(lambda r: r)
    assert p.drift + mean_jump == pytest.approx(free_cumulants(pair, 1)[0], rel=1e-3)


def test_param_domain_errors():
    with pytest.raises(DomainError):
        build_matrix_params(semicircle_pair(), 0)
    with pytest.raises(DomainError):
        build_matrix_params(semicircle_pair(), 10, alpha=0.5)


# -- samplers ---------------------------------------------------------------------

def test_haar_vector_n1_is_unimodular():
    v = sample_haar_vector(1, 3)
    assert v.shape == (1,) and abs(abs(v[0]) - 1) < 1e-15


def test_haar_vector_first_and_fourth_moments():
    n, k = 4, 10_000
    rng = np.random.default_rng(11)
    vs = np.array([sample_haar_vector(n, rng) for _ in range(k)])
    assert np.allclose(np.linalg.norm(vs, axis=1), 1.0, atol=1e-14)
    outer = vs[:, :, None] * vs[:, None, :].conj()
    mean = outer.mean(axis=0)
    se = outer.std(axis=0) / math.sqrt(k)
    assert np.all(np.abs(mean - np.eye(n) / n) <= 5 * se + 1e-15)
    q = np.abs(vs[:, 0]) ** 4
    assert abs(q.mean() - 2 / (n * (n + 1))) <= 5 * q.std() / math.sqrt(k)


def test_bm_increment_zero_step():
    h = sample_hermitian_bm_increment(5, 0.0, 1)
    assert np.array_equal(h.to_dense(), np.zeros((5, 5)))


def test_bm_increment_trace_square():
    n, dt, k = 6, 0.3, 10_000
    rng = np.random.default_rng(2)
    vals = []
    for _ in range(k):
        h = sample_hermitian_bm_increment(n, dt, rng).to_dense()
        vals.append(np.sum(np.abs(h) ** 2))
    vals = np.array(vals)
    assert abs(vals.mean() - n * n * dt) <= 5 * vals.std() / math.sqrt(k)


def test_bm_increment_is_wigner_at_n200():
    n, dt = 200, 0.7
    h = sample_hermitian_bm_increment(n, dt, 9).to_dense() / math.sqrt(n * dt)
    m = EmpiricalMeasure(np.linalg.eigvalsh(h))
    assert kolmogorov_distance(m, lambda x: semicircle_cdf(1.0, x)) <= 0.05


# -- paths --------------------------------------------------------------------------

def test_zero_process():
    p = build_matrix_params(GeneratingPair(0.0), 1)
    path = sample_path(p, 2.0, 4, 0)
    assert all(np.array_equal(m.to_dense(), np.zeros((1, 1))) for m in path.skeleton)


def test_pure_drift_process_is_exact():
    c = 1.75
    p = build_matrix_params(GeneratingPair(c), 1)
    path = sample_path(p, 2.0, 8, 0)
    for t, m in zip(path.times, path.skeleton):
        assert np.array_equal(m.to_dense(), np.array([[c * t]]))


def test_path_structure_and_hermiticity():
    p = build_matrix_params(mixed_pair(0.5, 2.0, 1.0), 8)
    path = sample_path(p, 1.0, 5, 123)
    assert path.times[0] == 0.0 and np.all(np.diff(path.times) >= 0)
    assert np.array_equal(path.skeleton[0].to_dense(), np.zeros((8, 8)))
    grid = set(np.round(np.linspace(0, 1, 6), 15))
    assert grid <= set(np.round(path.times, 15))
    assert sum(k == "jump" for k in path.kinds) == len(path.jump_events) > 0
    for m in path.skeleton:
        a = m.to_dense()
        assert np.max(np.abs(a - a.conj().T)) == 0.0


def test_jump_increments_are_rank_one():
    p = build_matrix_params(mixed_pair(1.0, 3.0, 2.0), 8)
    path = sample_path(p, 1.0, 2, 77)
    assert path.jump_events
    for event, inc in path.jump_increments():
        s = np.linalg.svd(inc, compute_uv=False)
        assert s[1] <= 1e-10 * event.r
        assert s[0] == pytest.approx(event.r, rel=1e-12)


def test_path_is_deterministic():
    p = build_matrix_params(free_poisson_pair(1.0), 6)
    assert sample_path(p, 1.0, 3, 42) == sample_path(p, 1.0, 3, 42)
    assert sample_path(p, 1.0, 3, 42) != sample_path(p, 1.0, 3, 43)
    a = [pt.matrix for pt in iter_path(p, 1.0, 3, replica_rng(5, 6, 0))]
    b = [pt.matrix for pt in iter_path(p, 1.0, 3, replica_rng(5, 6, 0))]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_path_argument_errors():
    p = build_matrix_params(free_poisson_pair(1.0), 10)
    with pytest.raises(DomainError):
        sample_path(p, 0.0, 2, 0)
    with pytest.raises(DomainError):
        sample_path(p, 1.0, 0, 0)
    big = build_matrix_params(free_poisson_pair(1e6), 100)
    with pytest.raises(ResourceGuardError):
        sample_path(big, 1.0, 1, 0)


def test_unitary_conjugation_preserves_spectrum():
    p = build_matrix_params(mixed_pair(0.5, 1.0, 1.0), 30)
    x = sample_path(p, 1.0, 1, 8).skeleton[-1].to_dense()
    u = random_unitary(30, np.random.default_rng(0))
    assert np.allclose(eigvalsh(u @ x @ u.conj().T), eigvalsh(x), atol=1e-8, rtol=0)


def _trace_moments(pair, n, reps, seed):
    p = build_matrix_params(pair, n)
    means, variances = [], []
    for k in range(reps):
        x = None
        for pt in iter_path(p, 1.0, 1, replica_rng(seed, n, k), keep_pre_jump=False):
            x = pt.matrix
        m1 = np.trace(x).real / n
        m2 = np.sum(np.abs(x) ** 2) / n
        means.append(m1)
        variances.append(m2 - m1 * m1)
    return np.array(means), np.array(variances)


@pytest.mark.parametrize("pair", [semicircle_pair(1.0), free_poisson_pair(1.0), mixed_pair(0.5, 0.5, 1.0)],
                         ids=["semicircle", "free_poisson", "mixed"])
def test_mean_tracks_first_free_cumulant(pair):
    means, _ = _trace_moments(pair, 40, 150, 2024)
    k1 = free_cumulants(pair, 1)[0]
    assert abs(means.mean() - k1) <= 5 * means.std(ddof=1) / math.sqrt(means.size) + 1e-12


def test_free_poisson_trace_mean_n100():
    means, _ = _trace_moments(free_poisson_pair(1.0), 100, 200, 99)
    assert abs(means.mean() - 1.0) <= 5 * means.std(ddof=1) / math.sqrt(means.size)


# -- export -------------------------------------------------------------------------

@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_hermitian_storage_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    a = g + g.conj().T
    h = HermitianMatrix.from_dense(a)
    assert np.array_equal(h.to_dense(), a)
    buf = io.BytesIO()
    write_matrix_dump(buf, [h, h])
    buf.seek(0)
    back = read_matrix_dump(buf)
    assert back == [h, h]


def test_dump_header_layout():
    h = HermitianMatrix.from_dense(np.array([[1.0, 2 + 3j], [2 - 3j, 4.0]]))
    buf = io.BytesIO()
    write_matrix_dump(buf, [h])
    raw = buf.getvalue()
    assert raw[:4] == b"HLEV"
    assert struct.unpack("<III", raw[4:16]) == (1, 2, 1)
    assert np.frombuffer(raw[16:], "<f8").tolist() == [1.0, 0.0, 2.0, 3.0, 4.0, 0.0]
    with pytest.raises(DomainError):
        read_matrix_dump(io.BytesIO(b"XXXX" + raw[4:]))
    with pytest.raises(DomainError):
        read_matrix_dump(io.BytesIO(raw[:-8]))


def test_path_csv_layouts():
    buf = io.StringIO()
    write_path_csv(buf, [0.0, 0.5], ["grid", "jump"], eigenvalues=[[0.0, 0.0], [1.0, 0.1]])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,event_type,lambda_1,lambda_2"
    assert lines[2] == "0.5,jump,1,0.10000000000000001"
    buf = io.StringIO()
    write_path_csv(buf, [0.0], ["grid"], matrix_refs=["p.hlev#0"])
    assert buf.getvalue().splitlines() == ["time,event_type,matrix_ref", "0,grid,p.hlev#0"]
