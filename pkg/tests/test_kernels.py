import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freelevy import _pykernels
from freelevy._backend import BACKEND, get_kernels
from freelevy.burgers import LimitLaw, SolverSettings, density
from freelevy.measures import free_poisson_pair, mixed_pair

compiled = pytest.mark.skipif(BACKEND != "cython", reason="compiled extension not built")


def random_hermitian(n, rng):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (g + g.conj().T) / 2


@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_tridiagonal_form_is_similar(n, seed):
    a = random_hermitian(n, np.random.default_rng(seed))
    d, e = _pykernels.tridiagonalize(a)
    t = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    assert np.allclose(np.linalg.eigvalsh(t), np.linalg.eigvalsh(a), atol=1e-10 * (1 + np.abs(a).max()))
    assert np.all(e >= 0)


def test_tridiagonal_ql_on_known_matrix():
    # the path graph on 5 vertices has eigenvalues 2 cos(k pi / 6)
    ev, ok = _pykernels.tridiag_eigenvalues(np.zeros(5), np.ones(4))
    assert ok
    ref = 2 * np.cos(np.arange(1, 6) * np.pi / 6)
    assert np.allclose(np.sort(ev), np.sort(ref), atol=1e-14)


@compiled
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_compiled_eigenvalues_match_python(n, seed):
    a = random_hermitian(n, np.random.default_rng(seed))
    ec, okc = get_kernels("cython").hermitian_eigenvalues(a)
    ep, okp = get_kernels("python").hermitian_eigenvalues(a)
    assert okc and okp
    assert np.max(np.abs(np.sort(ec) - np.sort(ep))) <= 1e-12 * (1 + np.abs(a).max())


@compiled
@pytest.mark.parametrize("pair", [free_poisson_pair(1.0), mixed_pair(0.5, 0.5, 1.0)], ids=["fp", "mixed"])
def test_compiled_characteristic_solver_matches_python(pair):
    rng = np.random.default_rng(0)
    z = rng.uniform(-1, 5, 200) + 1j * rng.uniform(1e-4, 3, 200)
    nodes, weights = pair.quadrature()
    args = (z, 0.9, pair.eta, pair.sigma2, np.ascontiguousarray(nodes), np.ascontiguousarray(weights))
    uc, sc = get_kernels("cython").solve_characteristic(*args)
    up, sp = get_kernels("python").solve_characteristic(*args)
    assert np.array_equal(sc, sp) and np.all(sc == 0)
    assert np.max(np.abs(uc - up)) <= 1e-12 * np.max(np.abs(up))


@compiled
def test_compiled_density_matches_python():
    x = np.linspace(-0.5, 4.5, 101)
    dc = density(LimitLaw(free_poisson_pair(1.0), 1.0, SolverSettings(backend="cython")), x)
    dp = density(LimitLaw(free_poisson_pair(1.0), 1.0, SolverSettings(backend="python")), x)
    assert np.max(np.abs(dc - dp)) <= 1e-10


def test_unknown_backend_is_rejected():
    with pytest.raises(ValueError):
        get_kernels("fortran")


def test_environment_variable_forces_fallback():
    env = dict(os.environ, FREELEVY_PURE_PYTHON="1")
    code = "from freelevy._backend import BACKEND, kernels; print(BACKEND, kernels.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "freelevy._pykernels"]
