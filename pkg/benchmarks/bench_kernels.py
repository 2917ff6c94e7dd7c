"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N] [--end-to-end]

Kernel rows compare both flavours in one process.  ``--end-to-end`` also
times a corpus Smatch run and a few training steps in subprocesses with and
without RGL_DISABLE_NUMBA=1.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rgl import _kernels as K
from rgl.corpus import GenSpec, generate
from rgl.smatch import _build
from rgl.amr_graph import to_triples


def _smatch_problem(seed=0):
    exs = generate(GenSpec(n_examples=2, seed=seed, max_nodes=24))
    big = max(exs, key=lambda e: len(e.graph.nodes))
    return _build(to_triples(big.graph), to_triples(big.graph))


def kernel_rows(repeat: int):
    rng = np.random.default_rng(0)
    prob = _smatch_problem()
    P, G = prob.U.shape
    m = rng.permutation(G)[:P].astype(np.int64)
    maps = np.stack([rng.permutation(G)[:P] for _ in range(256)]).astype(np.int64)
    rows = rng.normal(size=(8 * 40 * 2, 40))
    ln_in = rng.normal(size=(8 * 40, 64))
    xhat, rstd = K.layer_norm_rows_numpy(ln_in, 1e-5)
    flat = rng.normal(size=8 * 40 * 256)
    cases = [
        ("score_batch", K.score_batch_numba, K.score_batch_numpy, (maps, prob.U, *prob.quads)),
        ("best_move", K.best_move_numba, K.best_move_numpy, (m, prob.U, *prob.quads)),
        ("two_step", K.two_step_numba, K.two_step_numpy, (m, prob.U, *prob.quads)),
        ("softmax_rows", K.softmax_rows_numba, K.softmax_rows_numpy, (rows,)),
        ("layer_norm_rows", K.layer_norm_rows_numba, K.layer_norm_rows_numpy, (ln_in, 1e-5)),
        ("layer_norm_rows_backward", K.layer_norm_rows_backward_numba, K.layer_norm_rows_backward_numpy,
         (ln_in, xhat, rstd)),
        ("gelu_flat", K.gelu_flat_numba, K.gelu_flat_numpy, (flat,)),
        ("gelu_flat_backward", K.gelu_flat_backward_numba, K.gelu_flat_backward_numpy,
         (flat, flat, np.tanh(flat))),
    ]
    out = []
    for name, fast, slow, args in cases:
        fast(*args)  # compile
        t_fast = min(timeit.repeat(lambda: fast(*args), number=20, repeat=repeat)) / 20
        t_slow = min(timeit.repeat(lambda: slow(*args), number=20, repeat=repeat)) / 20
        out.append((name, t_fast, t_slow))
    return out


_E2E = """
import time
from rgl.corpus import GenSpec, generate
from rgl.smatch import corpus_smatch
from rgl.training import TrainConfig, build_vocab, encode_pairs, train_seq2seq
exs = generate(GenSpec(n_examples=200, seed=1))
golds = [e.graph for e in exs]
preds = golds[1:] + golds[:1]
corpus_smatch(preds[:2], golds[:2])
t = time.perf_counter(); corpus_smatch(preds, golds); a = time.perf_counter() - t
v = build_vocab(exs); pairs = encode_pairs(v, exs)
train_seq2seq(pairs, v, TrainConfig(total_steps=2))
t = time.perf_counter(); train_seq2seq(pairs, v, TrainConfig(total_steps=20)); b = time.perf_counter() - t
print(a, b)
"""


def end_to_end():
    res = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, RGL_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _E2E], env=env, capture_output=True, text=True, check=True)
        res[label] = [float(v) for v in out.stdout.split()]
    return [("smatch_200_pairs", res["numba"][0], res["numpy"][0]),
            ("train_20_steps", res["numba"][1], res["numpy"][1])]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    rows = kernel_rows(args.repeat)
    if args.end_to_end:
        rows += end_to_end()
    print(f"{'kernel':<28}{'numba_s':>12}{'numpy_s':>12}{'speedup':>10}")
    for name, f, s in rows:
        print(f"{name:<28}{f:>12.6f}{s:>12.6f}{s / f:>10.2f}")


if __name__ == "__main__":
    main()
