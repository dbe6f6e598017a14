"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and size with the median wall time of each backend
and the speedup.  The first numba call is made outside the timed region so JIT
compilation is not counted.
"""

import argparse
import time

import numpy as np

from kashinq import _kernels
from kashinq.ortho import make_butterfly


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases():
    rng = np.random.default_rng(0)
    for n, b in ((1024, 1), (4096, 64)):
        coef = make_butterfly(n, 0).payload.coef
        x = rng.standard_normal((n, b))
        yield (f"butterfly_apply n={n} cols={b}",
               lambda f, x=x, c=coef: f(x.copy(), c, False),
               _kernels.butterfly_apply_numpy, _kernels.butterfly_apply_numba)
    for bits in (3, 4):
        codes = rng.integers(0, 1 << bits, size=1 << 20).astype(np.uint8)
        packed = _kernels.pack_codes_numpy(codes, bits)
        yield (f"pack_codes bits={bits} count=2^20", lambda f, c=codes, b=bits: f(c, b),
               _kernels.pack_codes_numpy, _kernels.pack_codes_numba)
        yield (f"unpack_codes bits={bits} count=2^20", lambda f, p=packed, b=bits: f(p, b, 1 << 20),
               _kernels.unpack_codes_numpy, _kernels.unpack_codes_numba)
    for npts, k, d in ((1 << 18, 16, 1), (1 << 16, 256, 2)):
        pts = rng.standard_normal((npts, d))
        cents = rng.standard_normal((k, d))
        yield (f"nearest_centroid points={npts} k={k} d={d}", lambda f, p=pts, c=cents: f(p, c),
               _kernels.nearest_centroid_numpy, _kernels.nearest_centroid_numba)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<44} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, call, f_np, f_nb in cases():
        call(f_nb)  # compile
        t_np = _median_time(lambda: call(f_np), args.repeat)
        t_nb = _median_time(lambda: call(f_nb), args.repeat)
        print(f"{name:<44} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
