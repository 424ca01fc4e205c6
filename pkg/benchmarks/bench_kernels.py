"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--d 100000] [--repeat 5] [--round]

``--round`` also times a full aggregation round under each backend, each in
its own interpreter since the backend is fixed at import.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dropagg.kernels import get_backend

ROUND_SNIPPET = """
import time, numpy as np
from dropagg import BACKEND
from dropagg.protocol import ProtocolParams, run_round
p = ProtocolParams(n_sampled={n}, t={t}, d={d}, T=2, sigma_star_sq=1.0)
ups = {{u: p.encoder.encode(np.zeros({d})) for u in range(1, {n} + 1)}}
run_round(p, ups, {{1: "before_masked_input"}})
t0 = time.perf_counter()
for _ in range({repeat}):
    run_round(p, ups, {{1: "before_masked_input"}})
print(BACKEND, (time.perf_counter() - t0) / {repeat})
"""


def bench_kernels(d, repeat, n_keys=16):
    keys = np.arange(2 * n_keys, dtype=np.uint64).reshape(-1, 2) * np.uint64(0x1234567)
    signs = np.tile([1, -1], n_keys // 2)
    base = np.zeros(d, dtype=np.uint64)
    rows = []
    for name in ("python", "cython"):
        try:
            k = get_backend(name)
        except ImportError:
            print(f"{name}: not available", file=sys.stderr)
            continue
        cases = {
            "expand_mod": lambda: k.expand_mod(1, 2, d, 1 << 20),
            "masked_accumulate": lambda: k.masked_accumulate(base, keys, signs, 1 << 20),
            "gaussian": lambda: k.gaussian(1, 2, d),
        }
        for case, fn in cases.items():
            secs = min(timeit.repeat(fn, number=1, repeat=repeat))
            rows.append({"backend": name, "kernel": case, "d": d, "seconds": secs})
    return rows


def bench_round(n, t, d, repeat):
    rows = []
    for pure in ("1", "0"):
        env = dict(os.environ, DROPAGG_PURE_PYTHON=pure)
        code = ROUND_SNIPPET.format(n=n, t=t, d=d, repeat=repeat)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        rows.append({"backend": backend, "kernel": "run_round", "d": d, "n": n, "seconds": float(secs)})
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--d", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--round", action="store_true")
    args = ap.parse_args()
    rows = bench_kernels(args.d, args.repeat)
    if args.round:
        rows += bench_round(8, 5, args.d // 10, args.repeat)
    by = {(r["kernel"], r["backend"]): r["seconds"] for r in rows}
    for r in rows:
        print(json.dumps(r))
    print(f"{'kernel':<20}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for kernel in dict.fromkeys(r["kernel"] for r in rows):
        py, cy = by.get((kernel, "python")), by.get((kernel, "cython"))
        if py and cy:
            print(f"{kernel:<20}{py:12.5f}{cy:12.5f}{py / cy:10.1f}x")


if __name__ == "__main__":
    main()
