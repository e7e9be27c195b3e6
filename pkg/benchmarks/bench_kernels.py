"""Time each hot kernel under numba and under plain numpy.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The first numba call (JIT compile or cache load) is excluded from timing.
"""

import argparse
import statistics
import sys
import time

import numpy as np

from samlab import _kernels_numpy as np_impl

try:
    from samlab import _kernels_numba as nb_impl
except ImportError:
    nb_impl = None


def cases():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(128 * 7, 64))
    p = np_impl.softmax_rows(x)
    dy = rng.normal(size=x.shape)
    xhat, rstd = np_impl.layernorm_rows(x, 1e-6)
    logits = rng.normal(size=(1000, 16))
    labels = rng.integers(0, 16, size=1000)
    idx = rng.integers(0, 16, size=128 * 7)
    g = rng.normal(size=(64, 256))
    starts = np.linspace(-3.0, 5.0, 256)
    basin = (50.0, -1.0, 1.0, 2.0, 0.05, 0.1)
    return [
        ("softmax_rows", (x,)),
        ("log_softmax_rows", (x,)),
        ("softmax_rows_backward", (p, dy)),
        ("layernorm_rows", (x, 1e-6)),
        ("layernorm_rows_backward", (dy, xhat, rstd)),
        ("cross_entropy_rows", (logits, labels)),
        ("scatter_add_rows", (idx, x, 16)),
        ("adafactor_factored", (g, np.zeros(64), np.zeros(256), 0.5, 1e-30)),
        ("two_basin_descend", (starts, 2000, 0.01, 0.3) + basin),
        ("quadratic_sam_orbit", (1.0, 0.05, 4.0, 0.1, 20000)),
    ]


def timeit(fn, args, repeat):
    fn(*args)
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if nb_impl is None:
        print("numba unavailable; only the numpy path can be timed", file=sys.stderr)
    print(f"{'kernel':26s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a in cases():
        t_np = timeit(getattr(np_impl, name), a, args.repeat) * 1e3
        if nb_impl is None:
            print(f"{name:26s} {t_np:10.3f} {'-':>10s} {'-':>8s}")
            continue
        t_nb = timeit(getattr(nb_impl, name), a, args.repeat) * 1e3
        print(f"{name:26s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
