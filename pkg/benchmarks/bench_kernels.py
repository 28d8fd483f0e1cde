"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--rows 512] [--cols 612] [--repeat 20]

Each kernel runs on identical inputs under both backends; the table lists
median wall time per call and the largest absolute difference between the
two outputs relative to the largest output magnitude.
"""

import argparse
import sys
import timeit

import numpy as np

from fieldekf import kernels
from fieldekf.camera import CameraIntrinsics
from fieldekf.simulator import generate_map


def cases(rows, cols, seed=0):
    rng = np.random.default_rng(seed)
    N, k = rows * cols, 4
    G = rng.standard_normal((N, 1, k))
    phi = rng.standard_normal((N, k, 1))
    z = rng.standard_normal((N, 1))
    valid = np.ones(N, dtype=bool)
    valid[::17] = False
    Sinv = np.array([[100.0]])
    m = generate_map(1445, seed=seed)
    intr = CameraIntrinsics(rows=rows, cols=cols)
    i1, i2 = intr.sensor_axes()
    yield "gram_white", lambda b: kernels.gram_white(G, Sinv, valid, 1.0, backend=b)
    yield "gram_general", lambda b: kernels.gram_general(phi, G, valid, 1.0, backend=b)
    yield "project_white", lambda b: kernels.project_white(G, Sinv, z, valid, 1.0, backend=b)
    yield "project_general", lambda b: kernels.project_general(phi, z, valid, 1.0, backend=b)
    yield "render_jacobian", lambda b: kernels.render_jacobian(
        m.intensity, m.grad_x, m.grad_y, m.origin, m.pitch, i1, i2,
        85.0, 85.0, 40.0, 0.3, intr.focal, backend=b)


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.asarray(o, dtype=float).ravel() for o in out])
    return np.asarray(out, dtype=float).ravel()


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=512)
    p.add_argument("--cols", type=int, default=612)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the numpy fallback is available", file=sys.stderr)
    print(f"{args.rows} x {args.cols} pixels, median of {args.repeat} calls")
    print(f"{'kernel':<18}" + "".join(f"{b + ' (ms)':>16}" for b in backends) + f"{'speedup':>10}{'rel diff':>12}")
    for name, fn in cases(args.rows, args.cols):
        times, outs = {}, {}
        for b in backends:
            outs[b] = _flatten(fn(b))
            times[b] = 1e3 * float(np.median(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)))
        row = f"{name:<18}" + "".join(f"{times[b]:>16.3f}" for b in backends)
        if len(backends) == 2:
            ref = max(float(np.abs(outs["python"]).max()), 1e-300)
            diff = float(np.abs(outs["compiled"] - outs["python"]).max()) / ref
            row += f"{times['python'] / times['compiled']:>9.1f}x{diff:>12.1e}"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
