"""Pure numpy versions of the compiled kernels.

Squared distances are accumulated one coordinate at a time, in the same
order and with the same roundings as the compiled loop, so both backends
produce identical rankings and counts.
"""

import numpy as np


def _sq_dists_into(x: np.ndarray, i: int, out: np.ndarray, tmp: np.ndarray) -> np.ndarray:
    ref = x[i]
    np.subtract(x[:, 0], ref[0], out=out)
    np.multiply(out, out, out=out)
    for k in range(1, x.shape[1]):
        np.subtract(x[:, k], ref[k], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        np.add(out, tmp, out=out)
    return out


def _order(x: np.ndarray, i: int, dist: np.ndarray, tmp: np.ndarray) -> np.ndarray:
    _sq_dists_into(x, i, dist, tmp)
    dist[i] = -1.0
    # stable sort keeps ties in ascending index order; self sorts first
    return np.argsort(dist, kind="stable")


def join_counts(hd, ld, n_threads: int = 1) -> np.ndarray:
    hd = np.ascontiguousarray(hd, dtype=np.float64)
    ld = np.ascontiguousarray(ld, dtype=np.float64)
    n = hd.shape[0]
    if ld.shape[0] != n:
        raise ValueError("hd and ld must have the same number of rows")
    if n < 2:
        raise ValueError("need at least 2 points")
    counts = np.zeros(n, dtype=np.int64)
    ranks = np.arange(n, dtype=np.int32)
    positions = ranks[1:]
    dist = np.empty(n)
    tmp = np.empty(n)
    hd_rank = np.empty(n, dtype=np.int32)
    for i in range(n):
        order = _order(hd, i, dist, tmp)
        hd_rank[order] = ranks
        del order
        order = _order(ld, i, dist, tmp)
        joined = hd_rank[order[1:]]
        del order
        np.maximum(joined, positions, out=joined)
        counts += np.bincount(joined, minlength=n)
        del joined
    return counts


def neighbour_order(x, i: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 0 <= i < n:
        raise IndexError(i)
    order = _order(x, i, np.empty(n), np.empty(n))
    return order[1:]
