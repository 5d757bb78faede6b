"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best wall time of each backend, the
speedup, and whether the two outputs are bit-identical.
"""

import argparse
import math
import time

import numpy as np

from ctreach._core import ckernels, pykernels
from ctreach.controller import load_network, surrogate_path
from ctreach.plant import PlantParams


def best_of(fn, repeat):
    best, out = math.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.shape == b.shape and a.tobytes() == b.tobytes()
    return a == b


def cases():
    net = load_network(surrogate_path())
    W, B, R = net.weights, net.biases, net.relu
    pp = PlantParams()
    rng = np.random.default_rng(0)
    x = rng.uniform([-10, -0.5], [10, 0.5], size=(4096, 2))
    x0 = rng.uniform([-5, -0.2], [5, 0.2], size=(256, 2))
    box = np.array([0.0, 0.15625, 0.0, math.radians(0.46875)])
    gamma = np.array([-1.0, 1.2, -0.1, 0.1])
    kp, kth, c = -0.74 / (180 / math.pi), -0.44, 0.0
    return {
        "mlp_forward (4096 x 2)": lambda k: k.mlp_forward(x, W, B, R),
        "simulate_batch (256 x 256 RK4)": lambda k: k.simulate_batch(
            x0, W, B, R, None, pp.v, pp.L, pp.phi_limit, 1 / 256, 256, 0),
        "reach_kernel (64 substeps)": lambda k: k.reach_kernel(
            box, kp, kth, c, -1e-4, 1e-4, pp.v, pp.L, pp.phi_limit, gamma, 1.0, 64, 20),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':34s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  identical")
    for name, fn in cases().items():
        tp, op = best_of(lambda: fn(pykernels), args.repeat)
        tc, oc = best_of(lambda: fn(ckernels), args.repeat)
        print(f"{name:34s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}  {same(op, oc)}")


if __name__ == "__main__":
    main()
