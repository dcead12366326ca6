"""Benchmark the compiled pooling kernels against the numpy fallback.

Run as ``python -m sethar.backend.bench``. Two workloads are timed: a
sparse batch shaped like passive-sensor windows (few readings per
segment) and a dense one shaped like full benchmark windows, both at an
embedding width typical for the reference architecture. A full training
step of the set network is also timed under each backend, since the
surrounding matmuls run on numpy either way and cap the end-to-end
speedup.
"""

import time

import numpy as np

from . import available_backends


def _ragged(rng, n_seg, mean_m, z):
    counts = np.maximum(rng.poisson(mean_m, size=n_seg), 1)
    offsets = np.zeros(n_seg + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    emb = np.ascontiguousarray(rng.normal(size=(int(offsets[-1]), z)))
    return emb, offsets


def _time(fn, reps, warmup=3):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return np.mean(times) * 1e3, np.std(times) * 1e3


def bench_kernels(reps=50):
    rng = np.random.default_rng(0)
    cases = {
        "sparse batch (128 segs, ~4 readings, z=256)": _ragged(rng, 128, 4, 256),
        "dense batch (128 segs, ~200 readings, z=256)": _ragged(rng, 128, 200, 256),
    }
    rows = []
    for label, (emb, offsets) in cases.items():
        grad = np.ascontiguousarray(rng.normal(size=(len(offsets) - 1,
                                                     emb.shape[1])))
        for name, mod in available_backends().items():
            _, argmax = mod.pool_forward(emb, offsets)
            fwd = _time(lambda: mod.pool_forward(emb, offsets), reps)
            bwd = _time(lambda: mod.pool_backward(grad, argmax, offsets,
                                                  emb.shape[0]), reps)
            rows.append((label, name, fwd, bwd))
    return rows


def bench_train_step(reps=20):
    from ..dataio import ActivitySpace, NormStats, SparseSegment
    from ..harness import ArchConfig, TrainConfig, train
    from .. import backend as b

    rng = np.random.default_rng(1)
    acts = ActivitySpace(("a", "b", "c"))
    norm = NormStats(np.zeros(3), np.ones(3))
    segs = []
    for i in range(256):
        m = max(int(rng.poisson(4)), 1)
        ts = np.sort(rng.uniform(0, 2, size=m))
        segs.append(SparseSegment(ts, rng.uniform(0, 1, size=(m, 3)),
                                  0.0, 2.0, int(rng.integers(3))))
    cfg = TrainConfig(batch_size=128, lr=1e-4, lr_drop_epoch=1,
                      total_epochs=2, seed=0)
    rows = []
    for name, mod in available_backends().items():
        orig = (b.pool_forward, b.pool_backward)
        b.pool_forward, b.pool_backward = mod.pool_forward, mod.pool_backward
        try:
            mean, std = _time(lambda: train(segs, acts, norm, cfg,
                                            ArchConfig()), max(reps // 4, 3),
                              warmup=1)
        finally:
            b.pool_forward, b.pool_backward = orig
        rows.append((name, mean, std))
    return rows


def main():
    backends = available_backends()
    print(f"available backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled extension missing; timing the python kernels only")
    print()
    print("pooling kernels (mean ms over 50 reps)")
    print(f"{'case':<46} {'backend':<9} {'forward':>12} {'backward':>12}")
    for label, name, (fm, fs), (bm, bs) in bench_kernels():
        print(f"{label:<46} {name:<9} {fm:9.3f} ms {bm:9.3f} ms")
    print()
    print("full training run, 2 epochs x 256 segments (surrounding matmuls "
          "on numpy in both cases)")
    for name, mean, std in bench_train_step():
        print(f"  {name:<9} {mean:9.1f} ms +- {std:.1f}")


if __name__ == "__main__":
    main()
