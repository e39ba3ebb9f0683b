"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Times each kernel on shapes typical of a batch of 32 graphs with 8-16 nodes,
checks the two backends agree bit for bit, and times a full backbone forward
pass under each backend in a subprocess (the backend is fixed at import).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from graft import _kernels_py
from graft.kernels import Segments

try:
    from graft import _kernels as _cy
except ImportError:
    _cy = None

FORWARD_SNIPPET = """
import timeit, numpy as np
from graft import kernels
from graft.backbone import BackboneConfig, BackboneWeights, encode
from graft.graphdata import GraphBatch, generate_synthetic
ds = generate_synthetic("triangle-detect", 64, seed=0)
batch = GraphBatch(ds.graphs[:32])
W = BackboneWeights.init(BackboneConfig(d_in=ds.d_in, d_e=ds.d_e, d=64, L=5), np.random.default_rng(0))
t = min(timeit.repeat(lambda: encode(batch, W), number=1, repeat={repeat}))
print(kernels.BACKEND, t)
"""


def _cases(rng):
    n_nodes, n_edges, d = 384, 1100, 64
    a, b = rng.normal(size=(n_nodes, d)), rng.normal(size=(d, d))
    dst = rng.integers(0, n_nodes, n_edges)
    seg = Segments(dst, n_nodes)
    v = rng.normal(size=(n_edges, d))
    s = rng.normal(size=n_edges)
    return {
        "matmul 384x64 @ 64x64": (
            lambda m: m.matmul(a, b),
        ),
        "segment_sum 1100x64 -> 384": (
            lambda m: m.segment_sum(v, seg.order, seg.offsets, seg.max_size)
            if m is not _kernels_py
            else m.segment_sum(v, seg.order, seg.offsets, seg.max_size, ids=seg.ids, slot=seg.slot),
        ),
        "segment_max 1100 -> 384": (lambda m: m.segment_max(s, seg.order, seg.offsets),),
        "scatter_add 1100x64 -> 384": (lambda m: m.scatter_add(v, dst, n_nodes),),
    }


def run(repeat: int) -> dict:
    rng = np.random.default_rng(0)
    rows = {}
    for name, (fn,) in _cases(rng).items():
        row = {"python_s": min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=repeat))}
        if _cy is not None:
            row["cython_s"] = min(timeit.repeat(lambda: fn(_cy), number=1, repeat=repeat))
            row["speedup"] = row["python_s"] / row["cython_s"]
            row["bit_identical"] = bool(np.array_equal(fn(_kernels_py), fn(_cy)))
        rows[name] = row
    forward = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("GRAFT_PURE_PYTHON", None)
        if pure:
            env["GRAFT_PURE_PYTHON"] = "1"
        out = subprocess.run(
            [sys.executable, "-c", FORWARD_SNIPPET.format(repeat=max(3, repeat // 4))],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.split()
        forward[out[0]] = float(out[1])
    rows["backbone forward (32 graphs, d=64, L=5)"] = {
        "python_s": forward.get("python"),
        "cython_s": forward.get("cython"),
        "speedup": forward["python"] / forward["cython"] if "cython" in forward else None,
    }
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--json", dest="json_out")
    args = p.parse_args(argv)
    if _cy is None:
        print("compiled extension not built; only the numpy backend is timed")
    rows = run(args.repeat)
    width = max(map(len, rows))
    print(f"{'kernel':<{width}}  {'numpy ms':>9}  {'cython ms':>9}  {'speedup':>7}  bit-identical")
    for name, r in rows.items():
        cy, speedup = r.get("cython_s"), r.get("speedup")
        cy_text = "-" if cy is None else f"{1e3 * cy:.3f}"
        speed_text = "-" if speedup is None else f"{speedup:.2f}x"
        print(f"{name:<{width}}  {1e3 * r['python_s']:9.3f}  {cy_text:>9}  {speed_text:>7}  {r.get('bit_identical', '-')}")
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
