"""Compare the compiled and numpy interior-point kernels.

Times each kernel on random Hermitian data of the shapes the solver sees, then
a full SI and MDI guessing-probability solve under each backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from sdiqrng import kernels, matcore, mdi, optics, si


def random_ops(rng, m, nb, d):
    A = np.stack([np.stack([matcore.random_hermitian(d, rng) for _ in range(nb)]) for _ in range(m)])
    X = np.stack([matcore.random_density(d, rng) for _ in range(nb)])
    Z = np.stack([np.linalg.inv(matcore.random_density(d, rng) + np.eye(d)) for _ in range(nb)])
    return A, X, Z


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    shapes = {"si (m=6, nb=5, d=3)": (6, 5, 3), "mdi (m=27, nb=12, d=2)": (27, 12, 2),
              "large (m=60, nb=40, d=6)": (60, 40, 6)}
    rows = []
    for label, (m, nb, d) in shapes.items():
        A, X, Z = random_ops(rng, m, nb, d)
        y = rng.normal(size=m)
        for name, impl in kernels.backends().items():
            t = {}
            for k, fn in (("schur", lambda: impl.schur(A, X, Z)),
                          ("apply_ops", lambda: impl.apply_ops(A, X)),
                          ("adjoint", lambda: impl.adjoint(A, y))):
                t[k] = min(timeit.repeat(fn, number=200, repeat=repeat)) / 200 * 1e6
            rows.append((label, name, t))
    print(f"{'shape':28s} {'backend':8s} {'schur us':>10s} {'apply us':>10s} {'adjoint us':>11s}")
    for label, name, t in rows:
        print(f"{label:28s} {name:8s} {t['schur']:10.2f} {t['apply_ops']:10.2f} {t['adjoint']:11.2f}")


def bench_solves(repeat):
    params = optics.OpticalParams.from_loss_db(0.1, 0.0, p_d=1e-8, p_z=0.5, p_s=0.5)
    si_m, si_nu = optics.si_model(0.5), optics.si_nominal_stats(params)
    mdi_m, mdi_nu = optics.mdi_model(0.1), optics.mdi_nominal_stats(params)
    print(f"\n{'solve':8s} {'backend':8s} {'ms':>8s} {'h_min':>14s}")
    for name in kernels.backends():
        with kernels.use_backend(name):
            for label, fn in (("si", lambda: si.si_guessing_probability(si_m, si_nu)[1]),
                              ("mdi", lambda: mdi.mdi_guessing_probability(mdi_m, mdi_nu)[1])):
                val = fn()
                t = min(timeit.repeat(fn, number=3, repeat=repeat)) / 3 * 1e3
                print(f"{label:8s} {name:8s} {t:8.2f} {val:14.10f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print("available backends:", ", ".join(kernels.backends()), "| active:", kernels.BACKEND)
    bench_kernels(args.repeat)
    bench_solves(args.repeat)


if __name__ == "__main__":
    main()
