"""Compare the compiled and pure-Python kernels on typical workloads.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Runs each kernel on both backends, checks that they agree, and prints the
median wall time and speedup. A full tree-ensemble fit is timed too, with
the tree code switched between backends.
"""

import argparse
import json
import statistics
import time

import numpy as np

from cashflow_uw import kernels
from cashflow_uw.trees import fit_benchmark, presort


def timed(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def workloads(rng):
    n_auc = 20_000
    y = (rng.uniform(size=n_auc) < 0.15).astype(np.int64)
    s = np.round(rng.normal(size=n_auc) + y, 2)
    yield "auroc_counts n=20000", lambda impl: impl.auroc_counts(s, y)

    n, d = 611, 17
    X = rng.normal(size=(n, d)).round(3)
    target = (rng.uniform(size=n) < 0.15).astype(np.float64)
    w = np.ones(n)
    order = presort(X)
    mask = np.ones(n, dtype=np.uint8)
    feats = np.arange(d, dtype=np.int64)
    yield "best_split n=611 d=17", lambda impl: impl.best_split(X, target, w, order, mask, feats, 5)

    yl = target.astype(np.int64)
    for kind in ("RF", "GB", "AB"):
        def fit(impl, kind=kind):
            saved = kernels.best_split
            kernels.best_split = impl.best_split
            try:
                return fit_benchmark(kind, X, yl, {"n_estimators": 30}, seed=0).score(X)
            finally:
                kernels.best_split = saved
        yield f"{kind} fit 30 trees n=611", fit


def same(a, b):
    if isinstance(a, np.ndarray):
        return bool(np.allclose(a, b, rtol=0, atol=1e-12))
    return all(x == y or abs(x - y) <= 1e-9 * max(1.0, abs(x)) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rows = []
    for name, run in workloads(np.random.default_rng(0)):
        py, t_py = timed(lambda: run(backends["python"]), args.repeat)
        cy, t_cy = timed(lambda: run(backends["cython"]), args.repeat)
        rows.append({"workload": name, "python_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy,
                     "agree": same(py, cy)})
    if args.json:
        print(json.dumps(rows, indent=1))
    else:
        print(f"{'workload':<26}{'python s':>12}{'cython s':>12}{'speedup':>10}  agree")
        for r in rows:
            print(f"{r['workload']:<26}{r['python_s']:>12.4f}{r['cython_s']:>12.4f}{r['speedup']:>9.1f}x  {r['agree']}")
    return 0 if all(r["agree"] for r in rows) else 2


if __name__ == "__main__":
    raise SystemExit(main())
