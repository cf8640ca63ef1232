"""Benchmark the compiled kernels against the pure-numpy reference.

Runs the LSTM sequence forward/backward pair and the Adam update on
representative shapes with both kernel modules, reporting wall time per call,
speedup, and the largest elementwise deviation between the two backends.
Deviations are expected at rounding-error level only; anything larger points
at a kernel bug.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from optionvi import _kernels_numpy as knp

try:
    from optionvi import _kernels_numba as knb
except ImportError:
    knb = None


def make_case(rng, t, d_in, hidden):
    x = rng.standard_normal((t, d_in))
    w_ih = rng.standard_normal((d_in, 4 * hidden)) / np.sqrt(d_in)
    w_hh = rng.standard_normal((hidden, 4 * hidden)) / np.sqrt(hidden)
    b = rng.standard_normal(4 * hidden) / np.sqrt(hidden)
    dh = rng.standard_normal((t, hidden))
    return x, w_ih, w_hh, b, dh


def run_pair(mod, case):
    x, w_ih, w_hh, b, dh = case
    h, gates, c = mod.lstm_seq_forward(x, w_ih, w_hh, b)
    grads = mod.lstm_seq_backward(dh, x, h, c, gates, w_ih, w_hh)
    return (h,) + tuple(grads)


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def max_deviation(outs_a, outs_b):
    return max(float(np.max(np.abs(a - b))) for a, b in zip(outs_a, outs_b))


def bench_lstm(rng, repeats):
    print(f"{'shape':>24} {'numpy':>12} {'numba':>12} {'speedup':>9} {'max dev':>12}")
    for t, d_in, hidden in ((30, 6, 64), (30, 68, 64), (60, 134, 128)):
        case = make_case(rng, t, d_in, hidden)
        ref = run_pair(knp, case)
        t_np = time_call(lambda: run_pair(knp, case), repeats)
        label = f"T={t} in={d_in} H={hidden}"
        if knb is None:
            print(f"{label:>24} {t_np * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9} {'n/a':>12}")
            continue
        run_pair(knb, case)  # compile before timing
        got = run_pair(knb, case)
        t_nb = time_call(lambda: run_pair(knb, case), repeats)
        print(
            f"{label:>24} {t_np * 1e3:>10.3f}ms {t_nb * 1e3:>10.3f}ms "
            f"{t_np / t_nb:>8.2f}x {max_deviation(ref, got):>12.3e}"
        )


def bench_adam(rng, repeats):
    n = 500_000
    g = rng.standard_normal(n)

    def fresh():
        return rng.standard_normal(n).copy(), np.zeros(n), np.zeros(n)

    p, m, v = fresh()
    t_np = time_call(lambda: knp.adam_update(p, g, m, v, 3, 1e-4, 0.9, 0.999, 1e-8), repeats)
    if knb is None:
        print(f"{'adam n=500k':>24} {t_np * 1e3:>10.3f}ms {'n/a':>12}")
        return
    p1, m1, v1 = fresh()
    p2, m2, v2 = p1.copy(), m1.copy(), v1.copy()
    knp.adam_update(p1, g, m1, v1, 1, 1e-4, 0.9, 0.999, 1e-8)
    knb.adam_update(p2, g, m2, v2, 1, 1e-4, 0.9, 0.999, 1e-8)
    dev = max(float(np.max(np.abs(a - b))) for a, b in ((p1, p2), (m1, m2), (v1, v2)))
    p, m, v = fresh()
    knb.adam_update(p, g, m, v, 1, 1e-4, 0.9, 0.999, 1e-8)
    t_nb = time_call(lambda: knb.adam_update(p, g, m, v, 3, 1e-4, 0.9, 0.999, 1e-8), repeats)
    print(
        f"{'adam n=500k':>24} {t_np * 1e3:>10.3f}ms {t_nb * 1e3:>10.3f}ms "
        f"{t_np / t_nb:>8.2f}x {dev:>12.3e}"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    if knb is None:
        print("numba backend unavailable; showing numpy timings only")
    bench_lstm(rng, args.repeats)
    bench_adam(rng, args.repeats)


if __name__ == "__main__":
    main()
