"""Time the hot kernels on the numba path and on the numpy fallback.

Each path runs in its own interpreter because the switch
(``SOCRIPPLE_DISABLE_NUMBA``) is read once at import. Compile time is
excluded: every kernel is called once on a small input before timing.

    python3 benchmarks/bench_kernels.py            # full sizes
    python3 benchmarks/bench_kernels.py --quick    # small sizes, seconds
"""
import argparse
import json
import os
import subprocess
import sys
import time

SIZES = {
    "full": dict(pairs=300_000, n_users=10_000, n_items=5_000, d=32, scan_n=10_000, scan_q=512,
                 nsw_n=5_000, world_users=10_000, world_items=5_000),
    "quick": dict(pairs=30_000, n_users=2_000, n_items=1_000, d=32, scan_n=2_000, scan_q=128,
                  nsw_n=1_000, world_users=1_000, world_items=500),
}


def worker(size: dict) -> dict:
    import numpy as np

    from socripple import kernels
    from socripple.simgen import WorldConfig, gen_world

    rng = np.random.default_rng(0)
    out = {"numba": kernels.HAVE_NUMBA}

    def timed(name, fn, warm):
        warm()
        t = time.perf_counter()
        fn()
        out[name] = time.perf_counter() - t

    d = size["d"]
    ut = rng.uniform(-0.1, 0.1, (size["n_users"], d))
    it = rng.uniform(-0.1, 0.1, (size["n_items"], d))
    users = rng.integers(0, size["n_users"], size["pairs"])
    items = rng.integers(0, size["n_items"], size["pairs"])
    order = rng.permutation(size["pairs"])
    timed("sgd_epoch", lambda: kernels.sgd_epoch(ut, it, users, items, order, 128, 0.05),
          lambda: kernels.sgd_epoch(ut.copy(), it.copy(), users[:256], items[:256], order[:256] % 256, 128, 0.05))

    v = rng.normal(size=(size["scan_n"], d))
    q = rng.normal(size=(size["scan_q"], d))
    timed("dot_scan", lambda: kernels.dot_scan(v, q), lambda: kernels.dot_scan(v[:10], q[:2]))

    nv = rng.normal(size=(size["nsw_n"], d))
    nv /= np.linalg.norm(nv, axis=1, keepdims=True)
    timed("nsw_build", lambda: kernels.nsw_build(nv, np.arange(nv.shape[0]), 16, 32, 100),
          lambda: kernels.nsw_build(nv[:50], np.arange(50), 4, 8, 10))

    wc = WorldConfig(num_users=size["world_users"], num_items=size["world_items"],
                     num_creators=max(size["world_users"] // 20, 1))
    small = WorldConfig(num_users=100, num_creators=10, num_items=20, neighbor_pool=5, num_clusters=4)
    timed("gen_world", lambda: gen_world(wc), lambda: gen_world(small))
    return out


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--worker", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(SIZES[args.worker])))
        return
    size = "quick" if args.quick else "full"
    res = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = {**os.environ, "SOCRIPPLE_DISABLE_NUMBA": flag}
        p = subprocess.run([sys.executable, __file__, "--worker", size], env=env, capture_output=True,
                           text=True, check=True)
        res[label] = json.loads(p.stdout.strip().splitlines()[-1])
    if not res["numba"].pop("numba"):
        print("numba is not importable; both columns use the fallback")
    res["numpy"].pop("numba")
    print(f"sizes: {size}  {SIZES[size]}")
    print(f"{'kernel':12s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for k in res["numba"]:
        a, b = res["numba"][k], res["numpy"][k]
        print(f"{k:12s} {a:9.3f} {b:9.3f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
