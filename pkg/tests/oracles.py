"""Reference computations that do not reuse package code paths."""
import math

import numpy as np


def free_cumulants_from_moments(moments):
    """Free cumulants k_1..k_N from moments m_1..m_N via
    m_n = sum_{s=1}^n k_s sum_{i_1+..+i_s = n-s} m_{i_1}...m_{i_s}  (m_0 = 1)."""
    N = len(moments)
    m = [1.0] + list(moments)

    def comp(total, parts):
        # sum over compositions of `total` into `parts` nonnegative pieces of prod m_i
        table = [[0.0] * (total + 1) for _ in range(parts + 1)]
        table[0][0] = 1.0
        for p in range(1, parts + 1):
            for s in range(total + 1):
                table[p][s] = sum(table[p - 1][s - i] * m[i] for i in range(s + 1))
        return table[parts][total]

    k = []
    for n in range(1, N + 1):
        acc = sum(k[s - 1] * comp(n - s, s) for s in range(1, n))
        # the s = n term is k_n * m_0^n
        k.append(m[n] - acc)
    return k


def cumulants_by_contour(log_mgf, m_max, radius=0.5, points=256):
    """c_m = m! / (2 pi i) oint K(s) s^(-m-1) ds on |s| = radius, by the trapezoid rule."""
    theta = 2 * math.pi * np.arange(points) / points
    s = radius * np.exp(1j * theta)
    vals = np.array([log_mgf(v) for v in s])
    out = []
    for m in range(1, m_max + 1):
        coef = np.mean(vals * np.exp(-1j * m * theta)) / radius ** m
        out.append(float((math.factorial(m) * coef).real))
    return out


def classical_log_mgf(sigma2, gamma, atoms):
    """K(s) = gamma s + sigma2 s^2/2 + sum w (e^{s x} - 1 - s x 1{|x|<=1})."""
    def K(s):
        v = gamma * s + 0.5 * sigma2 * s * s
        for x, w in atoms:
            v += w * (np.exp(s * x) - 1 - (s * x if abs(x) <= 1 else 0.0))
        return v
    return K


def mp_cauchy(c, w):
    """Herglotz Cauchy transform of Marchenko-Pastur with ratio c (jump size 1)."""
    w = np.asarray(w, dtype=complex)
    a, b = (1 - math.sqrt(c)) ** 2, (1 + math.sqrt(c)) ** 2
    root = np.sqrt(w - a) * np.sqrt(w - b)
    return (w + 1 - c - root) / (2 * w)


def semicircle_cauchy(t, z):
    z = np.asarray(z, dtype=complex)
    r = 2 * math.sqrt(t)
    return (z - np.sqrt(z - r) * np.sqrt(z + r)) / (2 * t)


def mp_moments(c, k_max):
    """Moments of MP(c): sum_{j=1}^k N(k, j) c^j with Narayana numbers."""
    out = []
    for k in range(1, k_max + 1):
        out.append(sum(math.comb(k, j) * math.comb(k, j - 1) / k * c ** j for j in range(1, k + 1)))
    return out


def eigenvalues_by_bisection(a, pad=1.0, scan=4000, iters=200):
    """Roots of det(A - x I) located by a sign scan and bisection (tiny n only)."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    bound = float(np.max(np.sum(np.abs(a), axis=1))) + pad

    def f(x):
        return np.linalg.det(a - x * np.eye(n)).real

    xs = np.linspace(-bound, bound, scan)
    vals = np.array([f(x) for x in xs])
    roots = []
    for i in range(scan - 1):
        if vals[i] == 0:
            roots.append(xs[i])
        elif vals[i] * vals[i + 1] < 0:
            lo, hi = xs[i], xs[i + 1]
            flo = vals[i]
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                fm = f(mid)
                if fm * flo <= 0:
                    hi = mid
                else:
                    lo, flo = mid, fm
                if hi - lo < 1e-15 * max(1.0, abs(mid)):
                    break
            roots.append(0.5 * (lo + hi))
    return np.sort(np.array(roots))[::-1]


def semicircle_cdf(t, x):
    x = np.clip(np.asarray(x, dtype=float) / (2 * math.sqrt(t)), -1.0, 1.0)
    return 0.5 + (x * np.sqrt(1 - x * x) + np.arcsin(x)) / math.pi


def random_unitary(n, rng):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    return q * (d / np.abs(d))
