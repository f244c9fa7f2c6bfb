#!/usr/bin/env python3
"""Benchmark the compiled HMM kernels against the numpy fallback.

Times the three recursions on a training-map-sized problem (T=154, K=5)
and a full Baum-Welch fit driven through each backend. Run directly:

    python benchmarks/bench_hmm.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from trainmap import cartography, hmm, synthlab
from trainmap.hmm import _backend, _kernels_py
from trainmap.paramstats import STAT_NAMES

try:
    from trainmap.hmm import _kernels
except ImportError:
    _kernels = None


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(backend, name, repeats):
    rng = np.random.default_rng(0)
    t, k = 154, 5
    log_pi = np.log(np.full(k, 1.0 / k))
    log_a = np.log(rng.dirichlet(np.ones(k), size=k))
    log_b = np.ascontiguousarray(rng.standard_normal((t, k)) * 2.0)
    ll, alpha = backend.forward(log_pi, log_a, log_b)
    beta = backend.backward(log_a, log_b)

    rows = []
    rows.append(("forward", time_call(lambda: backend.forward(log_pi, log_a, log_b), repeats)))
    rows.append(("backward", time_call(lambda: backend.backward(log_a, log_b), repeats)))
    rows.append(("viterbi", time_call(lambda: backend.viterbi_path(log_pi, log_a, log_b), repeats)))
    rows.append(
        (
            "transition_weights",
            time_call(lambda: backend.transition_weights(alpha, beta, log_a, log_b, ll), repeats),
        )
    )
    print(f"\n{name} kernels (T={t}, K={k}; best of {repeats}):")
    for label, seconds in rows:
        print(f"  {label:<20s} {seconds * 1e6:10.1f} us")
    return {label: seconds for label, seconds in rows}


def bench_fit(repeats):
    script = synthlab.RegimeScript(
        regimes=tuple(
            synthlab.Regime(start, np.full(len(STAT_NAMES), float(3 * i)), np.ones(len(STAT_NAMES)))
            for i, start in enumerate((0, 40, 100))
        ),
        seeds=10,
        schedule=tuple(range(154)),
    )
    ensemble, _ = synthlab.generate_stat_series(script, rng_seed=0)
    standardized = cartography.standardize(
        ensemble, cartography.StandardizationMode(cartography.POOLED)
    )
    sequences = standardized.sequences()
    cfg = hmm.FitConfig(restarts=5, max_iterations=200, rng_seed=0)

    results = {}
    backends = [("python", _kernels_py)] + ([("compiled", _kernels)] if _kernels else [])
    for name, module in backends:
        _backend.kernels = module  # swap the backend the fit loop dispatches to
        try:
            seconds = time_call(lambda: hmm.fit(sequences, 5, cfg, STAT_NAMES), repeats)
        finally:
            _backend.kernels = _kernels or _kernels_py
        results[name] = seconds
        print(f"fit via {name:<9s} backend: {seconds:8.3f} s")
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    print(f"active backend at import: {hmm.BACKEND}")
    python_times = bench_kernels(_kernels_py, "python", max(args.repeats * 20, 100))
    if _kernels is None:
        print("\ncompiled kernels not built; showing the fallback only")
    else:
        compiled_times = bench_kernels(_kernels, "compiled", max(args.repeats * 20, 100))
        print("\nspeedups (python / compiled):")
        for label in python_times:
            print(f"  {label:<20s} {python_times[label] / compiled_times[label]:8.1f}x")

    print(f"\nfull Baum-Welch fit (10 runs x 154 checkpoints x {len(STAT_NAMES)} features, K=5):")
    fit_times = bench_fit(max(args.repeats // 2, 1))
    if "compiled" in fit_times:
        print(f"fit speedup: {fit_times['python'] / fit_times['compiled']:.1f}x")


if __name__ == "__main__":
    main()
