"""Compare the numba kernels with their numpy fallbacks.

The kernel path is fixed at import time, so each backend runs in its own
subprocess with ``RPMANIFOLD_DISABLE_NUMBA`` set accordingly. Results of both
backends are checked for agreement before timings are reported.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases():
    from rpmanifold import kernels as K
    from rpmanifold.tensor import tensor_size

    rng = np.random.default_rng(0)
    d, n = 3, 3
    D = tensor_size(d, n)

    def segs(m):
        logs = np.zeros((m, D))
        logs[:, 1:1 + d] = rng.normal(scale=0.1, size=(m, d))
        return K.batch_exp(logs, d, n)

    S_long, S_mid, S_short = segs(20000), segs(400), segs(120)
    A, B = segs(50000), segs(50000)
    pts = rng.uniform(-0.5, 0.5, size=(300, 2))
    # f(x) = sin(x1) + sin(x2) with its first two derivatives
    comps = [np.sin(pts).sum(axis=1)[:, None, None],
             np.cos(pts)[:, None, :],
             np.einsum("ni,ij->nij", -np.sin(pts), np.eye(2)).reshape(300, 1, 4)]
    return {
        "batch_mul 5e4 x d3n3": lambda: K.batch_mul(A, B, d, n),
        "chen_prefix 2e4 x d3n3": lambda: K.chen_prefix(S_long, d, n),
        "pvar_sums 400 x d3n3": lambda: K.pvar_sums(S_mid, None, d, n, 2.5),
        "pvar_sums_all 120 x d3n3": lambda: K.pvar_sums_all(S_short, d, n, 2.5),
        "lip_remainder_max 300 pts": lambda: K.lip_remainder_max(pts, comps, 2.5, "l1"),
    }


def worker(repeat: int) -> dict:
    from rpmanifold import _accel

    out = {"numba": _accel.USE_NUMBA, "cases": {}}
    for name, fn in _cases().items():
        t = time.perf_counter()
        first = np.asarray(fn())  # includes compilation or cache load
        warm = time.perf_counter() - t
        best = float("inf")
        for _ in range(repeat):
            t = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t)
        out["cases"][name] = {"first": warm, "best": best,
                              "checksum": float(np.nansum(np.abs(first))), "shape": list(first.shape)}
    return out


def _spawn(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, RPMANIFOLD_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="write raw timings here")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args.repeat)))
        return 0
    fast, slow = _spawn(False, args.repeat), _spawn(True, args.repeat)
    print(f"{'kernel':28s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  agree")
    ok = True
    for name, a in fast["cases"].items():
        b = slow["cases"][name]
        agree = a["shape"] == b["shape"] and np.isclose(a["checksum"], b["checksum"], rtol=1e-9)
        ok &= bool(agree)
        print(f"{name:28s} {a['best']:10.4f} {b['best']:10.4f} {b['best'] / a['best']:8.1f}x  {agree}")
    if not fast["numba"]:
        print("note: numba unavailable, both columns use numpy")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"numba": fast, "numpy": slow}, fh, indent=2, sort_keys=True)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
