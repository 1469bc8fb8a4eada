"""Time the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Both backends are
checked for agreement on every input before timing.
"""
import argparse
import timeit

import numpy as np

from arprotect import _kernels


def _cases(rng):
    x_long = rng.standard_normal(8 * 128 * 4)
    x_win = rng.standard_normal(64)
    params = np.sort(rng.uniform(0, 1, (3, 4)), axis=1)
    strength = rng.uniform(0, 1, (2000, 3))
    dd = _kernels.py.dd_series(x_long, 64)
    return {
        "dd_series (n=4096, h=64)": lambda k: k.dd_series(x_long, 64),
        "threshold_crossings (n=4096)": lambda k: k.threshold_crossings(dd, 0.05, 32),
        "sample_entropy (n=64, m=2)": lambda k: k.sample_entropy(x_win, 2, 0.2 * float(np.std(x_win))),
        "mamdani_centroid (2000 rows, 1001 pts)": lambda k: k.mamdani_centroid(strength, params, 1001),
    }


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(u, v) for u, v in zip(a, b))
    return np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=1e-9, atol=1e-12, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled kernels not built; only the numpy backend is available")
    backends = {"numpy": _kernels.py}
    if _kernels.compiled is not None:
        backends["cython"] = _kernels.compiled

    print(f"{'kernel':40s} " + " ".join(f"{b + ' ms':>12s}" for b in backends) + f"{'speedup':>10s}")
    for name, fn in _cases(np.random.default_rng(0)).items():
        if "cython" in backends and not _agree(fn(backends["cython"]), fn(backends["numpy"])):
            raise SystemExit(f"backends disagree on {name}")
        ms = {}
        for b, k in backends.items():
            n, _ = timeit.Timer(lambda: fn(k)).autorange()
            ms[b] = 1e3 * min(timeit.repeat(lambda: fn(k), number=n, repeat=args.repeat)) / n
        speed = f"{ms['numpy'] / ms['cython']:9.1f}x" if "cython" in ms else ""
        print(f"{name:40s} " + " ".join(f"{v:12.4f}" for v in ms.values()) + speed)


if __name__ == "__main__":
    main()
