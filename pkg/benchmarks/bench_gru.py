"""Time the compiled GRU kernels against the numpy fallback.

    python3 benchmarks/bench_gru.py [--repeat N]

Both backends are imported directly, so the result does not depend on
DIALSUM_PURE_PYTHON. Outputs are also compared so a speedup from a wrong
kernel cannot go unnoticed.
"""

import argparse
import timeit

import numpy as np

from dialsum.autodiff import _gru_py

try:
    from dialsum.autodiff import _gru_ext
except ImportError:
    _gru_ext = None

SIZES = [(20, 8), (60, 32), (120, 64), (200, 150)]  # (steps, hidden)


def _inputs(steps, hidden, seed=0):
    rng = np.random.default_rng(seed)
    gx = rng.normal(size=(steps, 3 * hidden))
    w_h = rng.normal(scale=1.0 / np.sqrt(hidden), size=(3 * hidden, hidden))  # stable, not chaotic
    b_h = rng.normal(size=3 * hidden)
    h0 = rng.normal(size=hidden)
    dhs = rng.normal(size=(steps, hidden))
    return gx, w_h, b_h, h0, dhs


def _round_trip(mod, gx, w_h, b_h, h0, dhs):
    hs, z, r, n, ghn = mod.gru_forward(gx, w_h, b_h, h0)
    return hs, mod.gru_backward(dhs, w_h, hs, z, r, n, ghn)


def _best(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _gru_ext is None:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1

    print(f"{'steps':>6} {'hidden':>6} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'rel diff':>9}")
    for steps, hidden in SIZES:
        args_ = _inputs(steps, hidden)
        py_hs, py_grads = _round_trip(_gru_py, *args_)
        cy_hs, cy_grads = _round_trip(_gru_ext, *args_)
        diff = max(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(a)), 1e-300)
                   for a, b in zip((py_hs, *py_grads), (cy_hs, *cy_grads)))
        t_py = _best(lambda: _round_trip(_gru_py, *args_), args.repeat)
        t_cy = _best(lambda: _round_trip(_gru_ext, *args_), args.repeat)
        print(f"{steps:>6} {hidden:>6} {1e3 * t_py:>10.3f} {1e3 * t_cy:>10.3f} {t_py / t_cy:>7.1f}x {diff:>9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
