"""Compare the compiled kernels with the pure-Python fallback (and LAPACK).

    python3 benchmarks/bench_kernels.py [--sizes 50,100,200] [--repeat 3]

Eigenvalues: Householder + implicit QL from each backend versus
numpy.linalg.eigvalsh.  Characteristic solver: density of the free Poisson
limit on a grid of x values, which runs t-continuation plus the eps ladder
for every point.
"""
import argparse
import time

import numpy as np

from freelevy import _pykernels
from freelevy._backend import BACKEND, get_kernels
from freelevy.burgers import LimitLaw, SolverSettings, density
from freelevy.measures import free_poisson_pair


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def random_hermitian(n, rng):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (g + g.conj().T) / 2


def bench_eigen(sizes, repeat, seed):
    rng = np.random.default_rng(seed)
    rows = []
    compiled = get_kernels("cython") if BACKEND == "cython" else None
    for n in sizes:
        a = random_hermitian(n, rng)
        ref = np.linalg.eigvalsh(a)
        t_lapack = best_of(lambda: np.linalg.eigvalsh(a), repeat)
        t_py = best_of(lambda: _pykernels.hermitian_eigenvalues(a), repeat)
        err_py = np.max(np.abs(np.sort(_pykernels.hermitian_eigenvalues(a)[0]) - ref))
        if compiled is not None:
            t_c = best_of(lambda: compiled.hermitian_eigenvalues(a), repeat)
            err_c = np.max(np.abs(np.sort(compiled.hermitian_eigenvalues(a)[0]) - ref))
        else:
            t_c = err_c = float("nan")
        rows.append((n, t_c, t_py, t_lapack, err_c, err_py))
    return rows


def bench_density(points, repeat):
    x = np.linspace(-0.5, 4.5, points)
    out = {}
    for name in ("cython", "python"):
        if name == "cython" and BACKEND != "cython":
            continue
        law = LimitLaw(free_poisson_pair(1.0), 1.0, SolverSettings(backend=name))
        out[name] = (best_of(lambda: density(law, x), repeat), density(law, x))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", default="10,50,100,200")
    p.add_argument("--points", type=int, default=601)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"active backend: {BACKEND}")
    print("\nHermitian eigenvalues (seconds, best of %d)" % args.repeat)
    print(f"{'n':>5} {'compiled':>10} {'python':>10} {'lapack':>10} {'speedup':>8} {'err comp':>10} {'err py':>10}")
    for n, tc, tp, tl, ec, ep in bench_eigen(sizes, args.repeat, args.seed):
        print(f"{n:>5} {tc:>10.4g} {tp:>10.4g} {tl:>10.4g} {tp / tc:>8.1f} {ec:>10.2e} {ep:>10.2e}")

    print(f"\nfree Poisson density on {args.points} points (seconds, best of {args.repeat})")
    res = bench_density(args.points, args.repeat)
    for name, (t, _) in res.items():
        print(f"  {name:>8}: {t:.4g}")
    if len(res) == 2:
        diff = np.max(np.abs(res["cython"][1] - res["python"][1]))
        print(f"  speedup {res['python'][0] / res['cython'][0]:.1f}x, max |difference| {diff:.2e}")


if __name__ == "__main__":
    main()
