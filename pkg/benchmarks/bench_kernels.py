"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from coseg import kernels


def grid_network(h, w, seed=0):
    """Segmentation-style graph: 4-connected grid plus source/sink arcs."""
    rng = np.random.default_rng(seed)
    n = h * w
    idx = np.arange(n).reshape(h, w)
    s, t = n, n + 1
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], 1)
    down = np.stack([idx[:-1].ravel(), idx[1:].ravel()], 1)
    pairs = np.concatenate([right, down])
    nb = rng.integers(1, 30, len(pairs))
    tails = np.concatenate([pairs[:, 0], np.full(n, s), idx.ravel()])
    heads = np.concatenate([pairs[:, 1], idx.ravel(), np.full(n, t)])
    caps = np.concatenate([nb, rng.integers(0, 100, n), rng.integers(0, 100, n)])
    rev = np.concatenate([nb, np.zeros(2 * n, np.int64)])
    return n + 2, s, t, tails.astype(np.int64), heads.astype(np.int64), caps.astype(np.int64), rev.astype(np.int64)


def slic_inputs(h, w, k, seed=0):
    rng = np.random.default_rng(seed)
    lab = rng.uniform(0, 100, (h, w, 3))
    step = float(np.sqrt(h * w / k))
    ys, xs = np.meshgrid(np.arange(step / 2, h, step), np.arange(step / 2, w, step), indexing="ij")
    centers = np.column_stack([lab[ys.astype(int).ravel(), xs.astype(int).ravel()], ys.ravel(), xs.ravel()])
    return lab, np.ascontiguousarray(centers), step, np.ones((h, w), bool)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        impls = {"python": kernels.backend("python"), "cython": kernels.backend("cython")}
    except ImportError:
        impls = {"python": kernels.backend("python")}
        print("compiled kernels not built; timing the fallback only")

    print(f"{'kernel':<22}{'backend':<9}{'seconds':>10}")
    for h, w in ((48, 64), (96, 128)):
        net = grid_network(h, w)
        flows = {}
        for name, impl in impls.items():
            sec = best_of(lambda: flows.setdefault(name, impl.bk_maxflow(*net)[0]), args.repeat)
            print(f"{f'maxflow {h}x{w}':<22}{name:<9}{sec:>10.4f}")
        assert len(set(flows.values())) == 1, flows
    for h, w, k in ((48, 64, 100), (240, 320, 1500)):
        lab, centers, step, active = slic_inputs(h, w, k)
        for name, impl in impls.items():
            labels = np.full((h, w), -1, np.int32)
            sec = best_of(lambda: impl.slic_assign(lab, centers, step, 10.0, active, labels), args.repeat)
            print(f"{f'slic {h}x{w} k={k}':<22}{name:<9}{sec:>10.4f}")


if __name__ == "__main__":
    main()
