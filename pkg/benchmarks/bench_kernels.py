"""Benchmark the hot kernels: jitted vs pure-numpy backends.

Times the three loops that dominate training (score refinement, its
adjoint, greedy selection) on synthetic workloads of growing size, checks
that both backends produce bitwise-identical outputs, and prints a
speedup table. Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --proposals 32 128 512 --repeats 50
"""

import argparse
import time

import numpy as np

from annoconsist import kernels


def _median_time(fn, repeats: int) -> float:
    fn()  # warm call: jit compilation, cache effects
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _refine_workload(rng, p: int, m: int, n_edges: int):
    g0 = rng.normal(0.0, 1.0, size=(p, m))
    eu = rng.integers(0, p, size=n_edges).astype(np.int64)
    ev = (eu + 1 + rng.integers(0, p - 1, size=n_edges)) % p
    ev = ev.astype(np.int64)
    w = np.exp(-rng.uniform(0.0, 2.0, size=n_edges))
    return g0, eu, ev, w


def _greedy_workload(rng, p: int, n_classes: int):
    g = rng.normal(0.0, 1.0, size=(p, n_classes + 1))
    classes = np.arange(1, n_classes + 1, dtype=np.int64)
    thresholds = np.zeros(n_classes)
    ovl = rng.uniform(0.0, 1.0, size=(p, p))
    ovl *= rng.random(size=(p, p)) < 0.3  # sparse overlaps
    np.fill_diagonal(ovl, 0.0)
    return g, classes, thresholds, ovl


def bench_size(rng, p: int, n_classes: int, n_iters: int, delta: float,
               repeats: int, backends) -> list:
    m = n_classes + 1
    g0, eu, ev, w = _refine_workload(rng, p, m, 4 * p)
    stack_ref = None
    q = rng.normal(0.0, 1.0, size=(p, m))
    g, classes, thresholds, ovl = _greedy_workload(rng, p, n_classes)

    rows = []
    outputs = {}
    for name, (fwd, bwd, greedy) in backends.items():
        stack = fwd(g0, eu, ev, w, delta, n_iters)
        if stack_ref is None:
            stack_ref = stack
        grad = bwd(stack, eu, ev, w, delta, q)
        labels, status = greedy(g, classes, thresholds, ovl, 0.5, True)
        outputs[name] = (stack, grad, labels, status)
        rows.append({
            "backend": name,
            "p": p,
            "refine": _median_time(lambda: fwd(g0, eu, ev, w, delta, n_iters), repeats),
            "adjoint": _median_time(lambda: bwd(stack, eu, ev, w, delta, q), repeats),
            "greedy": _median_time(lambda: greedy(g, classes, thresholds, ovl, 0.5, True), repeats),
        })

    if len(outputs) == 2:
        a, b = outputs["numpy"], outputs["numba"]
        for got, want in zip(a, b):
            np.testing.assert_array_equal(np.asarray(got), np.asarray(want))
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--proposals", type=int, nargs="+", default=[16, 64, 256])
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--iters", type=int, default=3)
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = {"numpy": (kernels._refine_forward_py,
                          kernels._refine_backward_py,
                          kernels._greedy_labels_py)}
    if kernels.HAS_NUMBA:
        backends["numba"] = (kernels._refine_forward_nb,
                             kernels._refine_backward_nb,
                             kernels._greedy_labels_nb)
    else:
        print("numba not installed; timing the numpy path only")

    rng = np.random.default_rng(args.seed)
    rows = []
    for p in args.proposals:
        rows.extend(bench_size(rng, p, args.classes, args.iters, args.delta,
                               args.repeats, backends))

    print(f"active backend: {kernels.backend_name()}  "
          f"(ANNOCONSIST_NUMBA={'0 forces numpy' if not kernels.USE_NUMBA else '1'})")
    header = f"{'kernel':<10}{'P':>6}" + "".join(
        f"{name + ' (us)':>14}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel in ("refine", "adjoint", "greedy"):
        for p in args.proposals:
            sub = {r["backend"]: r for r in rows if r["p"] == p}
            line = f"{kernel:<10}{p:>6}"
            for name in backends:
                line += f"{sub[name][kernel] * 1e6:>14.1f}"
            if len(backends) == 2:
                line += f"{sub['numpy'][kernel] / sub['numba'][kernel]:>10.1f}"
            print(line)
    if len(backends) == 2:
        print("outputs of the two backends are bitwise identical")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
