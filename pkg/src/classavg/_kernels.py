"""Numba inner loops for the rotation-invariant distance search.

Each image is handled independently inside ``prange``, with all reductions
running in a fixed order, so results are bit-identical for any thread
count.  Accumulation happens in float64 over 256-element blocks (the block
partials stay in the input dtype for SIMD speed); a block-level early
abandon skips candidates that already exceed the incumbent.  Ties are
resolved towards the lexicographically smallest (cluster, rotation) pair.

Rotation row q of a stack holds the image rotated by +theta_q; the reported
rotation index r follows the centroid-rotation convention, r = (m - q) % m.
"""

import os
import warnings

import numpy as np

# the sandboxed TBB is too old for numba; pick the built-in layer up front
# instead of warning at first kernel launch
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

with warnings.catch_warnings():
    warnings.filterwarnings("ignore", message=".*TBB.*")
    from numba import config as _numba_config
    from numba import njit, prange, set_num_threads

_BLOCK = 256


def thread_budget(requested: int | None) -> int:
    """Clamp a requested thread count to what the runtime can provide and
    apply it; results never depend on the outcome, only wall time does."""
    available = _numba_config.NUMBA_NUM_THREADS
    budget = available if requested is None else max(1, min(int(requested), available))
    set_num_threads(budget)
    return budget


@njit(cache=True, parallel=True)
def assign_l1(V, C, bestacc, bestj, bestr):
    """Argmin over (cluster, rotation) of the L1 embedding distance.

    V: (n, m, P) rotated-image embeddings; C: (k, P) centroid embeddings.
    Writes the unscaled best accumulator, cluster index and rotation index.
    """
    n, m, P = V.shape
    k = C.shape[0]
    for i in prange(n):
        bacc = np.inf
        bj = -1
        br = -1
        for r in range(m):
            q = (m - r) % m
            row = V[i, q]
            for j in range(k):
                c = C[j]
                acc = 0.0
                t0 = 0
                while t0 < P:
                    t1 = min(t0 + _BLOCK, P)
                    sub = row[t0] - row[t0]  # zero in the input dtype
                    for t in range(t0, t1):
                        d = row[t] - c[t]
                        sub += abs(d)
                    acc += sub
                    if acc > bacc:
                        break
                    t0 = t1
                if acc < bacc or (acc == bacc and (j < bj or (j == bj and r < br))):
                    bacc = acc
                    bj = j
                    br = r
        bestacc[i] = bacc
        bestj[i] = bj
        bestr[i] = br


@njit(cache=True, parallel=True)
def assign_l2(V, C, bestacc, bestj, bestr):
    """Argmin over (cluster, rotation) of the squared-difference sum."""
    n, m, P = V.shape
    k = C.shape[0]
    for i in prange(n):
        bacc = np.inf
        bj = -1
        br = -1
        for r in range(m):
            q = (m - r) % m
            row = V[i, q]
            for j in range(k):
                c = C[j]
                acc = 0.0
                t0 = 0
                while t0 < P:
                    t1 = min(t0 + _BLOCK, P)
                    sub = row[t0] - row[t0]
                    for t in range(t0, t1):
                        d = row[t] - c[t]
                        sub += d * d
                    acc += sub
                    if acc > bacc:
                        break
                    t0 = t1
                if acc < bacc or (acc == bacc and (j < bj or (j == bj and r < br))):
                    bacc = acc
                    bj = j
                    br = r
        bestacc[i] = bacc
        bestj[i] = bj
        bestr[i] = br
