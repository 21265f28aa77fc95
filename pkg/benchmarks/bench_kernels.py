"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py --paths 20000 --steps 200
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from gcb_lab import kernels
from gcb_lab.processes import make_descente, make_gl_chain, make_noisy_lorenz, make_ou_1d


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_normals(mod, paths: int, m: int, repeat: int) -> float:
    ids = np.arange(paths, dtype=np.uint64)
    return _best(lambda: mod.normals(7, kernels.TAG_INCREMENT, 3, ids, m), repeat)


def bench_advance(mod, spec, paths: int, steps: int, dt: float, repeat: int) -> float:
    model, params = spec.kernel
    ids = np.arange(paths, dtype=np.uint64)

    def run():
        x = np.zeros((paths, spec.dim)) + 0.5
        status = np.full(paths, -1, dtype=np.int64)
        mod.advance(model, params, x, ids, 7, 0, steps, dt, status)

    return _best(run, repeat)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    backends = {name: kernels.load(name) for name in kernels.available()}
    models = {
        "ou1d": (make_ou_1d(1.0, 1.0), 1e-3),
        "gl_chain(10)": (make_gl_chain(10, 1.0, 2.0, 1.0, 1.0), 1e-2),
        "lorenz": (make_noisy_lorenz(10.0, 28.0, 8.0 / 3.0, 1.0), 1e-3),
        "descente": (make_descente(1), 1e-5),
    }
    results = []
    for name, mod in backends.items():
        for m in (1, 3, 11):
            sec = bench_normals(mod, args.paths, m, args.repeat)
            results.append({"backend": name, "task": f"normals m={m}", "seconds": sec,
                            "ns_per_item": 1e9 * sec / (args.paths * m)})
        for label, (spec, dt) in models.items():
            sec = bench_advance(mod, spec, args.paths, args.steps, dt, args.repeat)
            results.append({"backend": name, "task": f"advance {label}", "seconds": sec,
                            "ns_per_item": 1e9 * sec / (args.paths * args.steps)})
    if args.json:
        print(json.dumps(results, indent=2))
        return 0
    print(f"{'backend':<10}{'task':<24}{'seconds':>10}{'ns/item':>12}")
    for r in results:
        print(f"{r['backend']:<10}{r['task']:<24}{r['seconds']:>10.4f}{r['ns_per_item']:>12.1f}")
    if len(backends) > 1:
        print("\nspeed-up of compiled over python:")
        by = {(r["backend"], r["task"]): r["seconds"] for r in results}
        for r in results:
            if r["backend"] == "compiled":
                py = by.get(("python", r["task"]))
                if py:
                    print(f"  {r['task']:<24}{py / r['seconds']:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
