"""Time the numba kernels against their numpy twins.

Two parts: the raw kernels on inputs shaped like the ones the profile
pipeline produces, and an end-to-end Hopf profile run once per backend in a
fresh interpreter (the backend is fixed at import time by ONEILL_NO_NUMBA).

    python benchmarks/bench_kernels.py [--repeat 5] [--points 256]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from oneill import _kernels as K
from oneill import jets as jt


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(points):
    rng = np.random.default_rng(0)
    sp = jt.space(3, 4)
    t = int(sp._upto[4])
    X = rng.standard_normal((points * 27, t))
    dst = sp.K[:t]
    D = rng.standard_normal((points, 2, 3))
    M = rng.standard_normal((points, 3, 3))
    G = np.einsum("pab,pcb->pac", M, M) + 3 * np.eye(3)
    V = rng.standard_normal((points, 3, 3))
    return {
        "scatter (jet products)": ("scatter", (X, dst, sp.size)),
        "nullspace (vertical basis)": ("nullspace", (D, 1e-12)),
        "gram_schmidt (adapted frame)": ("gram_schmidt", (V, G, 1e-8)),
    }


PROFILE_SNIPPET = """
import time
from oneill import invariants as inv, models, _kernels
spec = models.build_hopf()
X = inv.halton_points(inv._box_array(spec, [[0.3, 1.2], [0, 1], [0, 1]]), {points}, 0)
inv.profile_values(spec, X[:4], 3)
t0 = time.perf_counter()
inv.profile_values(spec, X, 3)
print(_kernels.backend(), time.perf_counter() - t0)
"""


def end_to_end(points):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, ONEILL_NO_NUMBA=flag)
        res = subprocess.run(
            [sys.executable, "-c", PROFILE_SNIPPET.format(points=points)],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        name, secs = res.stdout.split()
        out[name] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=256)
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend exists")
        return
    print(f"kernels, {args.points} points, best of {args.repeat}")
    print(f"{'kernel':32s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>8s}")
    for label, (name, a) in kernel_cases(args.points).items():
        f_np, f_nb = getattr(K, name + "_np"), getattr(K, name + "_nb")
        r_np, r_nb = f_np(*a), f_nb(*a)
        for u, v in zip(np.atleast_1d(r_np) if not isinstance(r_np, tuple) else r_np,
                        np.atleast_1d(r_nb) if not isinstance(r_nb, tuple) else r_nb):
            assert np.allclose(u, v, atol=1e-10), f"{name}: backends disagree"
        t_np = best_of(lambda: f_np(*a), args.repeat)
        t_nb = best_of(lambda: f_nb(*a), args.repeat)
        print(f"{label:32s} {t_np * 1e3:12.3f} {t_nb * 1e3:12.3f} {t_np / t_nb:8.1f}x")

    print(f"\nend to end: Hopf order-3 profile at {args.points} points")
    for name, secs in end_to_end(args.points).items():
        print(f"  {name:6s} {secs:8.3f} s")


if __name__ == "__main__":
    main()
