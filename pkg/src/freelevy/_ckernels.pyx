# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Householder/QL eigenvalues and the characteristic Newton solver.

Mirrors :mod:`freelevy._pykernels` function for function.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot, copysign
from libc.float cimport DBL_EPSILON

cnp.import_array()

cdef extern from "complex.h" nogil:
    double creal(double complex)
    double cimag(double complex)
    double cabs(double complex)
    double complex conj(double complex)

cdef enum:
    ST_OK = 0
    ST_NO_CONVERGENCE = 1
    ST_BRANCH = 2
    ST_SINGULAR = 3

OK = ST_OK
NO_CONVERGENCE = ST_NO_CONVERGENCE
BRANCH = ST_BRANCH
SINGULAR = ST_SINGULAR


cdef inline double complex _mk(double re, double im) noexcept nogil:
    cdef double complex z
    (<double*>&z)[0] = re
    (<double*>&z)[1] = im
    return z


def tridiagonalize(a):
    """Householder reduction to real tridiagonal form (lower triangle only)."""
    cdef double complex[:, ::1] A = np.array(a, dtype=np.complex128, order="C", copy=True)
    cdef Py_ssize_t n = A.shape[0]
    cdef cnp.ndarray[double, ndim=1] d_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] e_arr = np.zeros(max(n - 1, 0))
    cdef double[::1] d = d_arr
    cdef double[::1] e = e_arr
    cdef double complex[::1] v = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] p = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t k, i, j, m
    cdef double xnorm, vn2, tau, kk, ax0
    cdef double complex phase, acc, aij, vi, qi, vj, qj
    with nogil:
        for k in range(n - 2):
            d[k] = creal(A[k, k])
            xnorm = 0.0
            for i in range(k + 1, n):
                xnorm += creal(A[i, k]) * creal(A[i, k]) + cimag(A[i, k]) * cimag(A[i, k])
            xnorm = sqrt(xnorm)
            if xnorm == 0.0:
                continue
            ax0 = cabs(A[k + 1, k])
            if ax0 != 0.0:
                phase = A[k + 1, k] / ax0
            else:
                phase = 1.0
            m = n - k - 1
            for i in range(m):
                v[i] = A[k + 1 + i, k]
            v[0] = v[0] + phase * xnorm
            vn2 = 0.0
            for i in range(m):
                vn2 += creal(v[i]) * creal(v[i]) + cimag(v[i]) * cimag(v[i])
            tau = 2.0 / vn2
            # p = tau * A22 v using the lower triangle of A22
            for i in range(m):
                p[i] = 0.0
            for i in range(m):
                acc = creal(A[k + 1 + i, k + 1 + i]) * v[i]
                vi = v[i]
                for j in range(i):
                    aij = A[k + 1 + i, k + 1 + j]
                    acc = acc + aij * v[j]
                    p[j] = p[j] + conj(aij) * vi
                p[i] = p[i] + acc
            kk = 0.0
            for i in range(m):
                p[i] = tau * p[i]
                kk += creal(conj(v[i]) * p[i])
            kk = 0.5 * tau * kk
            for i in range(m):
                p[i] = p[i] - kk * v[i]
            # A22 -= v q^* + q v^*   (lower triangle)
            for i in range(m):
                vi = v[i]
                qi = p[i]
                for j in range(i + 1):
                    A[k + 1 + i, k + 1 + j] = A[k + 1 + i, k + 1 + j] - vi * conj(p[j]) - qi * conj(v[j])
            e[k] = xnorm
        if n >= 2:
            d[n - 2] = creal(A[n - 2, n - 2])
            e[n - 2] = cabs(A[n - 1, n - 2])
        if n >= 1:
            d[n - 1] = creal(A[n - 1, n - 1])
    return d_arr, e_arr


cdef bint _tql(double[::1] d, double[::1] e, int max_iter) noexcept nogil:
    # e has length n with e[n-1] == 0
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t l, m, i
    cdef int it
    cdef double dd, g, r, s, c, p, f, b
    cdef bint underflow
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = fabs(d[m]) + fabs(d[m + 1])
                if fabs(e[m]) <= DBL_EPSILON * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_iter:
                return False
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = hypot(f, g)
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
    return True


def tridiag_eigenvalues(d, e, int max_iter=30):
    """Implicit-shift QL; returns ``(eigenvalues, ok)`` (unsorted)."""
    cdef cnp.ndarray[double, ndim=1] dd = np.array(d, dtype=float, copy=True)
    cdef Py_ssize_t n = dd.shape[0]
    cdef cnp.ndarray[double, ndim=1] ee = np.zeros(n)
    if n > 1:
        ee[:n - 1] = e
    cdef double[::1] dv = dd
    cdef double[::1] ev = ee
    cdef bint ok
    with nogil:
        ok = _tql(dv, ev, max_iter)
    return dd, bool(ok)


def hermitian_eigenvalues(a, int max_iter=30):
    d, e = tridiagonalize(a)
    return tridiag_eigenvalues(d, e, max_iter)


# -- characteristic equation --------------------------------------------------

cdef inline int _phi(double complex u, double eta, double sigma2, double[::1] nodes,
                     double[::1] weights, double complex* f, double complex* df) noexcept nogil:
    cdef Py_ssize_t k
    cdef double complex dx
    if u == 0:
        return ST_SINGULAR
    f[0] = eta + sigma2 / u
    df[0] = -sigma2 / (u * u)
    for k in range(nodes.shape[0]):
        dx = u - nodes[k]
        if dx == 0:
            return ST_SINGULAR
        f[0] = f[0] + weights[k] * (1.0 + nodes[k] * u) / dx
        df[0] = df[0] - weights[k] * (1.0 + nodes[k] * nodes[k]) / (dx * dx)
    return ST_OK


cdef int _newton(double complex zeta, double complex* u, double t, double eta, double sigma2,
                 double[::1] nodes, double[::1] weights, double tol, double ftol,
                 int max_iter, bint allow_real) noexcept nogil:
    cdef double scale = cabs(zeta)
    cdef double complex f, df, res, jac, step, un
    cdef double lam, moved, au, ares
    cdef double prev = 1e308
    cdef int it
    if scale < 1.0:
        scale = 1.0
    for it in range(max_iter):
        if _phi(u[0], eta, sigma2, nodes, weights, &f, &df) != ST_OK:
            return ST_SINGULAR
        res = u[0] + t * f - zeta
        # ill-conditioned roots: the residual stalls at roundoff before the step does
        ares = cabs(res)
        if ares <= ftol * scale and ares >= 0.5 * prev:
            return ST_OK
        prev = ares
        jac = 1.0 + t * df
        if jac == 0:
            return ST_SINGULAR
        step = res / jac
        un = u[0] - step
        if allow_real:
            if cimag(un) < 0.0:
                un = _mk(creal(un), 0.25 * cimag(u[0]))
        else:
            lam = 1.0
            while not cimag(un) > 0.0:
                lam *= 0.5
                if lam < 1e-12:
                    return ST_BRANCH
                un = u[0] - lam * step
        moved = cabs(un - u[0])
        u[0] = un
        au = cabs(un)
        if au < 1.0:
            au = 1.0
        if moved <= tol * au:
            if _phi(u[0], eta, sigma2, nodes, weights, &f, &df) != ST_OK:
                return ST_SINGULAR
            if cabs(u[0] + t * f - zeta) <= ftol * scale:
                return ST_OK
            return ST_NO_CONVERGENCE
    return ST_NO_CONVERGENCE


def refine_characteristic(zeta, u0, double t, double eta, double sigma2, nodes, weights,
                          double tol=1e-14, double ftol=1e-12, int max_iter=100,
                          bint allow_real=False):
    cdef double complex[::1] z = np.ascontiguousarray(np.ravel(zeta), dtype=np.complex128)
    cdef double complex[::1] start = np.ascontiguousarray(np.ravel(u0), dtype=np.complex128)
    cdef double[::1] xs = np.ascontiguousarray(nodes, dtype=float)
    cdef double[::1] ws = np.ascontiguousarray(weights, dtype=float)
    cdef Py_ssize_t npts = z.shape[0], k
    out_arr = np.empty(npts, dtype=np.complex128)
    status_arr = np.empty(npts, dtype=np.int32)
    cdef double complex[::1] out = out_arr
    cdef int[::1] status = status_arr
    cdef double complex u
    with nogil:
        for k in range(npts):
            u = start[k]
            status[k] = _newton(z[k], &u, t, eta, sigma2, xs, ws, tol, ftol, max_iter, allow_real)
            out[k] = u
    return out_arr, status_arr


def solve_characteristic(zeta, double t, double eta, double sigma2, nodes, weights,
                         double tol=1e-14, double ftol=1e-12, int max_iter=100,
                         int n_steps=8, double min_step=1e-4):
    cdef double complex[::1] z = np.ascontiguousarray(np.ravel(zeta), dtype=np.complex128)
    cdef double[::1] xs = np.ascontiguousarray(nodes, dtype=float)
    cdef double[::1] ws = np.ascontiguousarray(weights, dtype=float)
    cdef Py_ssize_t npts = z.shape[0], k
    out_arr = np.empty(npts, dtype=np.complex128)
    status_arr = np.zeros(npts, dtype=np.int32)
    cdef double complex[::1] out = out_arr
    cdef int[::1] status = status_arr
    cdef double complex u, un, up, f, df, jac
    cdef double hmax, h, tc, tn
    cdef int st
    cdef bint last
    with nogil:
        for k in range(npts):
            u = z[k]
            st = ST_OK
            if t > 0.0:
                hmax = t / n_steps
                h = hmax
                tc = 0.0
                while tc < t:
                    last = t - tc <= h * (1.0 + 1e-12)
                    tn = t if last else tc + h
                    up = u
                    if _phi(u, eta, sigma2, xs, ws, &f, &df) == ST_OK:
                        jac = 1.0 + tc * df
                        if jac != 0:
                            up = u - (tn - tc) * f / jac
                    if not cimag(up) > 0.0:
                        up = u
                    un = up
                    st = _newton(z[k], &un, tn, eta, sigma2, xs, ws, tol, ftol, max_iter, False)
                    if st == ST_OK:
                        u = un
                        tc = tn
                        h = 2.0 * h
                        if h > hmax:
                            h = hmax
                    else:
                        h *= 0.5
                        if h < min_step * t:
                            u = un
                            break
            out[k] = u
            status[k] = st
    return out_arr, status_arr
