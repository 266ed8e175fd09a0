"""Benchmark the fused LSTM pointwise kernels: compiled vs numpy.

Runs the forward and backward stage on a range of batch/width shapes and
prints a per-call timing table with the speedup of the compiled extension
over the numpy fallback. Usage:

    python3 benchmarks/bench_kernels.py [--repeats 7] [--inner 200]

The two implementations share signatures and buffers, so the loop body is
identical; only the module differs.
"""

import argparse
import time

import numpy as np

from kdmn.numcore import kernels_py

try:
    from kdmn.numcore import _kernels as kernels_c
except ImportError:
    kernels_c = None

SHAPES = [(1, 16), (20, 32), (20, 512), (500, 512)]


def make_buffers(n: int, h: int, rng):
    gates = rng.normal(size=(n, 4 * h))
    c_prev = rng.normal(size=(n, h))
    out = np.empty((n, h))
    return {
        "gates": gates,
        "c_prev": c_prev,
        "c_new": out.copy(),
        "tanh_c": out.copy(),
        "h_new": out.copy(),
        "dh": rng.normal(size=(n, h)),
        "dc": rng.normal(size=(n, h)),
        "dgates": np.empty((n, 4 * h)),
        "dc_prev": out.copy(),
    }


def time_stage(kernels, buf, stage: str, inner: int, repeats: int) -> float:
    """Best-of-repeats mean seconds per call."""
    # the backward stage reads activated gates, so run forward once first
    work = dict(buf)
    work["gates"] = buf["gates"].copy()
    kernels.lstm_pointwise_forward(work["gates"], work["c_prev"],
                                   work["c_new"], work["tanh_c"], work["h_new"])
    best = float("inf")
    for _ in range(repeats):
        if stage == "forward":
            gates = [buf["gates"].copy() for _ in range(inner)]
            t0 = time.perf_counter()
            for g in gates:
                kernels.lstm_pointwise_forward(g, work["c_prev"], work["c_new"],
                                               work["tanh_c"], work["h_new"])
            elapsed = time.perf_counter() - t0
        else:
            t0 = time.perf_counter()
            for _ in range(inner):
                kernels.lstm_pointwise_backward(
                    work["gates"], work["c_prev"], work["tanh_c"], work["dh"],
                    work["dc"], work["dgates"], work["dc_prev"])
            elapsed = time.perf_counter() - t0
        best = min(best, elapsed / inner)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--inner", type=int, default=200)
    args = parser.parse_args()

    if kernels_c is None:
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)

    header = f"{'shape':>10}  {'stage':>8}  {'numpy':>10}  {'compiled':>10}  {'speedup':>7}"
    print(header)
    print("-" * len(header))
    for n, h in SHAPES:
        buf = make_buffers(n, h, rng)
        for stage in ("forward", "backward"):
            t_py = time_stage(kernels_py, buf, stage, args.inner, args.repeats)
            if kernels_c is not None:
                t_c = time_stage(kernels_c, buf, stage, args.inner, args.repeats)
                ratio = t_py / t_c if t_c > 0 else float("inf")
                print(f"{n}x{h:>6}  {stage:>8}  {t_py * 1e6:>8.1f}us  "
                      f"{t_c * 1e6:>8.1f}us  {ratio:>6.2f}x")
            else:
                print(f"{n}x{h:>6}  {stage:>8}  {t_py * 1e6:>8.1f}us  "
                      f"{'-':>10}  {'-':>7}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
