"""Time the compiled and numpy kernel backends on training-sized tensors.

    python benchmarks/bench_kernels.py [--repeat 20] [--csv out.csv]

Shapes follow one training step on the 8x8 acceptance scenario (32 episodes
x 9 steps x 4 agents of 3-plane local observations) and on a 16x16 map.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from hecta.neuralcore.kernels import available_backends

SHAPES = {
    "local 8x8": (1152, 3, 8, 8),
    "global 8x8": (288, 7, 8, 8),
    "local 16x16": (288, 3, 16, 16),
}


def bench(mod, x, w, b, repeat):
    y = mod.conv2d_forward(x, w, b)
    dy = np.ones_like(y)
    c = np.ascontiguousarray(y[:, :, : y.shape[2] // 2 * 2, : y.shape[3] // 2 * 2])
    p, arg = mod.maxpool2_forward(c)
    dp = np.ones_like(p)
    cases = {
        "conv fwd": lambda: mod.conv2d_forward(x, w, b),
        "conv bwd": lambda: mod.conv2d_backward(dy, x, w),
        "pool fwd": lambda: mod.maxpool2_forward(c),
        "pool bwd": lambda: mod.maxpool2_backward(dp, arg, c.shape),
    }
    return {k: min(timeit.repeat(f, number=1, repeat=repeat)) * 1e3 for k, f in cases.items()}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    for name, shape in SHAPES.items():
        x = rng.standard_normal(shape)
        w = rng.standard_normal((10, shape[1], 3, 3))
        b = rng.standard_normal(10)
        res = {be: bench(mod, x, w, b, args.repeat) for be, mod in backends.items()}
        for op in res["numpy"]:
            row = {"shape": name, "op": op, **{f"{be}_ms": round(r[op], 3) for be, r in res.items()}}
            if "cython" in res:
                row["speedup"] = round(res["numpy"][op] / res["cython"][op], 2)
            rows.append(row)
    cols = list(rows[0])
    print("  ".join(f"{c:>12s}" for c in cols))
    for r in rows:
        print("  ".join(f"{str(r[c]):>12s}" for c in cols))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
