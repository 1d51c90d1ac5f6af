"""Pure-Python reference kernels (fallback for the compiled ``_ckernels``).

Both modules expose the same functions with the same status codes; the
compiled one is preferred at import time by :mod:`freelevy._backend`.
"""
import math

import numpy as np

OK = 0
NO_CONVERGENCE = 1
BRANCH = 2
SINGULAR = 3

_EPS = np.finfo(float).eps


def tridiagonalize(a):
    """Householder reduction of a Hermitian matrix to real tridiagonal form.

    Returns the diagonal ``d`` and the moduli ``e`` of the subdiagonal; the
    complex tridiagonal matrix is unitarily similar to the real one with
    off-diagonal ``e`` through a diagonal phase matrix.
    """
    a = np.array(a, dtype=np.complex128, copy=True)
    n = a.shape[0]
    d = np.empty(n)
    e = np.zeros(max(n - 1, 0))
    for k in range(n - 2):
        x = a[k + 1:, k]
        xnorm = float(np.sqrt(np.sum(x.real ** 2 + x.imag ** 2)))
        d[k] = a[k, k].real
        if xnorm == 0.0:
            continue
        x0 = x[0]
        phase = x0 / abs(x0) if x0 != 0 else 1.0
        v = x.copy()
        v[0] += phase * xnorm
        tau = 2.0 / float(np.sum(v.real ** 2 + v.imag ** 2))
        sub = a[k + 1:, k + 1:]
        p = tau * (sub @ v)
        kk = 0.5 * tau * np.vdot(v, p).real
        q = p - kk * v
        sub -= np.outer(v, q.conj()) + np.outer(q, v.conj())
        e[k] = xnorm
    if n >= 2:
        d[n - 2] = a[n - 2, n - 2].real
        e[n - 2] = abs(a[n - 1, n - 2])
    if n >= 1:
        d[n - 1] = a[n - 1, n - 1].real
    return d, e


def tridiag_eigenvalues(d, e, max_iter=30):
    """Implicit-shift QL on a real symmetric tridiagonal matrix.

    Returns ``(eigenvalues, ok)``; eigenvalues are unsorted.
    """
    d = [float(v) for v in d]
    n = len(d)
    e = [float(v) for v in e] + [0.0]
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= _EPS * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_iter:
                return np.array(d), False
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return np.array(d), True


def hermitian_eigenvalues(a, max_iter=30):
    d, e = tridiagonalize(a)
    return tridiag_eigenvalues(d, e, max_iter)


# -- characteristic equation  zeta = u + t*phi(u) ------------------------------

def _phi(u, eta, sigma2, nodes, weights):
    f = eta + sigma2 / u
    df = -sigma2 / (u * u)
    for x, w in zip(nodes, weights):
        dx = u - x
        f += w * (1.0 + x * u) / dx
        df -= w * (1.0 + x * x) / (dx * dx)
    return f, df


def _newton(zeta, u, t, eta, sigma2, nodes, weights, tol, ftol, max_iter, allow_real):
    scale = max(1.0, abs(zeta))
    prev = math.inf
    for _ in range(max_iter):
        try:
            f, df = _phi(u, eta, sigma2, nodes, weights)
        except ZeroDivisionError:
            return u, SINGULAR
        res = u + t * f - zeta
        # ill-conditioned roots: the residual stalls at roundoff before the step does
        ares = abs(res)
        if ares <= ftol * scale and ares >= 0.5 * prev:
            return u, OK
        prev = ares
        jac = 1.0 + t * df
        if jac == 0:
            return u, SINGULAR
        step = res / jac
        un = u - step
        if allow_real:
            if un.imag < 0.0:
                un = complex(un.real, 0.25 * u.imag)
        else:
            lam = 1.0
            while not un.imag > 0.0:
                lam *= 0.5
                if lam < 1e-12:
                    return u, BRANCH
                un = u - lam * step
        moved = abs(un - u)
        u = un
        if moved <= tol * max(1.0, abs(u)):
            try:
                f, _ = _phi(u, eta, sigma2, nodes, weights)
            except ZeroDivisionError:
                return u, SINGULAR
            if abs(u + t * f - zeta) <= ftol * scale:
                return u, OK
            return u, NO_CONVERGENCE
    return u, NO_CONVERGENCE


def refine_characteristic(zeta, u0, t, eta, sigma2, nodes, weights,
                          tol=1e-14, ftol=1e-12, max_iter=100, allow_real=False):
    """Newton solve of ``zeta = u + t*phi(u)`` at fixed t from starting points ``u0``."""
    zeta = np.asarray(zeta, dtype=complex).ravel()
    u0 = np.asarray(u0, dtype=complex).ravel()
    nodes = [float(x) for x in nodes]
    weights = [float(w) for w in weights]
    out = np.empty(zeta.size, dtype=complex)
    status = np.empty(zeta.size, dtype=np.int32)
    for k in range(zeta.size):
        out[k], status[k] = _newton(complex(zeta[k]), complex(u0[k]), float(t), float(eta),
                                    float(sigma2), nodes, weights, tol, ftol, max_iter, allow_real)
    return out, status


def solve_characteristic(zeta, t, eta, sigma2, nodes, weights,
                         tol=1e-14, ftol=1e-12, max_iter=100, n_steps=8, min_step=1e-4):
    """Continuation in time from ``u = zeta`` at t=0 to the requested t.

    Each step uses an Euler predictor and damped Newton restricted to Im u > 0;
    failed steps are halved until the step falls below ``min_step * t``.
    """
    zeta = np.asarray(zeta, dtype=complex).ravel()
    nodes = [float(x) for x in nodes]
    weights = [float(w) for w in weights]
    t = float(t)
    out = np.empty(zeta.size, dtype=complex)
    status = np.zeros(zeta.size, dtype=np.int32)
    for k in range(zeta.size):
        z = complex(zeta[k])
        u = z
        st = OK
        if t > 0.0:
            hmax = t / n_steps
            h = hmax
            tc = 0.0
            while tc < t:
                last = t - tc <= h * (1.0 + 1e-12)
                tn = t if last else tc + h
                try:
                    f, df = _phi(u, eta, sigma2, nodes, weights)
                    jac = 1.0 + tc * df
                    up = u - (tn - tc) * f / jac if jac != 0 else u
                except ZeroDivisionError:
                    up = u
                if not up.imag > 0.0:
                    up = u
                un, st = _newton(z, up, tn, eta, sigma2, nodes, weights, tol, ftol, max_iter, False)
                if st == OK:
                    u, tc = un, tn
                    h = min(hmax, 2.0 * h)
                else:
                    h *= 0.5
                    if h < min_step * t:
                        u = un
                        break
        out[k] = u
        status[k] = st
    return out, status
