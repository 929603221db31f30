#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run directly:  python3 benchmarks/bench_kernels.py
The numba side is warmed up (JIT-compiled) before timing. Set
MBNF_DISABLE_NUMBA=1 to confirm the fallback path is the one the package
would pick.
"""

import time

import numpy as np

from mbnf import kernels


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_viterbi(rng):
    T, Q = 2000, 60
    emis = rng.standard_normal((T, Q))
    loop = np.log(np.full(Q, 0.7))
    fwd = np.log(np.full(Q, 0.3))
    return (emis, loop, fwd), kernels.viterbi_decode_numpy, kernels.viterbi_decode_numba


def bench_edit(rng):
    ref = rng.integers(0, 50, size=1500)
    hyp = rng.integers(0, 50, size=1500)
    return (ref, hyp), kernels.edit_dp_numpy, kernels.edit_dp_numba


def bench_nccf(rng):
    frames = np.ascontiguousarray(rng.standard_normal((300, 400)))
    return (frames, 40, 266), kernels.nccf_peaks_numpy, kernels.nccf_peaks_numba


def main():
    rng = np.random.default_rng(0)
    print(f"numba available: {kernels.HAVE_NUMBA}   package uses numba: {kernels.USING_NUMBA}")
    rows = [("kernel", "numpy (ms)", "numba (ms)", "speedup")]
    for name, bench in (("viterbi", bench_viterbi), ("edit_dp", bench_edit), ("nccf", bench_nccf)):
        args, np_fn, nb_fn = bench(rng)
        t_np = time_call(np_fn, *args)
        if nb_fn is not None:
            nb_fn(*args)  # warm up / compile
            t_nb = time_call(nb_fn, *args)
            rows.append((name, f"{t_np * 1e3:.2f}", f"{t_nb * 1e3:.2f}", f"{t_np / t_nb:.1f}x"))
        else:
            rows.append((name, f"{t_np * 1e3:.2f}", "n/a", "n/a"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for row in rows:
        print("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))


if __name__ == "__main__":
    main()
