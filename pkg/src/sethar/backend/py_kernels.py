"""Pure-python (numpy) fallback for the ragged pooling kernels.

Semantics match ``_poolcore`` exactly: first-occurrence argmax, float64
throughout. Used when the compiled extension is unavailable or when
``SETHAR_PURE_PYTHON=1`` is set.
"""

import numpy as np


def pool_forward(emb, offsets):
    n_seg = len(offsets) - 1
    z = emb.shape[1]
    pooled = np.empty((n_seg, z), dtype=np.float64)
    argmax = np.empty((n_seg, z), dtype=np.int64)
    cols = np.arange(z)
    for i in range(n_seg):
        seg = emb[offsets[i]:offsets[i + 1]]
        idx = seg.argmax(axis=0)
        argmax[i] = idx
        pooled[i] = seg[idx, cols]
    return pooled, argmax


def pool_backward(grad_pooled, argmax, offsets, n_rows):
    z = grad_pooled.shape[1]
    out = np.zeros((n_rows, z), dtype=np.float64)
    cols = np.arange(z)
    for i in range(len(offsets) - 1):
        # (row, col) targets are unique within a segment, so fancy
        # assignment does not drop coincident updates.
        out[offsets[i] + argmax[i], cols] += grad_pooled[i]
    return out
