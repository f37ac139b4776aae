"""Neighbourhood-preservation scores: Q_NX, R_NX and their AUCs.

Neighbour ranks are assigned by ascending squared Euclidean distance with
ties broken by ascending point index, identically in both spaces. Instead
of a co-ranking matrix, each neighbour ``j`` of reference ``i`` is counted
once, at the neighbourhood size ``K = max(hd rank, ld rank)`` where it
enters both K-neighbourhoods; cumulative sums of these join counts give
``sum_i |nu_i^K & n_i^K|`` for every K in O(N) memory per worker.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError
from .tensor import SeededRng, as_matrix

__all__ = [
    "RankProfile",
    "RnxResult",
    "neighbor_ranks",
    "intersection_profile",
    "qnx_curve",
    "rnx_curve",
    "auc_scores",
    "evaluate",
    "default_threads",
]


@dataclass
class RankProfile:
    reference_index: int | None
    intersection_profile: np.ndarray  # c[K-1] = |nu^K & n^K|, K = 1..N-1


@dataclass
class RnxResult:
    n: int
    qnx: np.ndarray  # K = 1..N-1
    rnx: np.ndarray  # K = 1..N-2
    local_sp: float
    global_sp: float
    subsample: int | None = None
    subsample_seed: int | None = None
    indices: np.ndarray | None = None

    def curve_csv(self) -> str:
        """``K,qnx,rnx`` rows for K = 1..N-1; rnx is empty at K = N-1."""
        lines = ["K,qnx,rnx"]
        for k in range(1, self.n):
            r = repr(float(self.rnx[k - 1])) if k <= self.n - 2 else ""
            lines.append(f"{k},{float(self.qnx[k - 1])!r},{r}")
        return "\n".join(lines) + "\n"

    def scores_text(self) -> str:
        sub = "none" if self.subsample is None else str(self.subsample)
        lines = [
            f"local_sp={self.local_sp!r}",
            f"global_sp={self.global_sp!r}",
            f"n={self.n}",
            f"subsample={sub}",
        ]
        if self.subsample_seed is not None:
            lines.append(f"subsample_seed={self.subsample_seed}")
        return "\n".join(lines) + "\n"


def default_threads() -> int:
    """Worker count: ``GROUPENC_THREADS`` if set, else the CPU count."""
    env = os.environ.get("GROUPENC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def neighbor_ranks(points, reference: int) -> np.ndarray:
    """Ranks 1..N-1 of every other point with respect to ``reference``.

    The result is listed in ascending point index with the reference
    itself left out, so entry ``j`` refers to point ``j`` if
    ``j < reference`` and to point ``j + 1`` otherwise.
    """
    x = as_matrix(points, "points")
    n = x.shape[0]
    if n < 2:
        raise ShapeError("need at least 2 points")
    if not 0 <= reference < n:
        raise ShapeError(f"reference {reference} out of range for {n} points")
    order = kernels.neighbour_order(x, int(reference))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n)
    return np.delete(ranks, reference)


def _check_permutation(ranks: np.ndarray, name: str) -> None:
    m = ranks.size
    if ranks.ndim != 1 or not np.array_equal(np.sort(ranks), np.arange(1, m + 1)):
        raise ContractError(f"{name} must be a permutation of 1..{m}")


def intersection_profile(hd_ranks, ld_ranks, reference_index: int | None = None) -> RankProfile:
    """Sizes ``|nu^K & n^K|`` for K = 1..N-1 from one reference's ranks."""
    hd_ranks = np.asarray(hd_ranks, dtype=np.int64)
    ld_ranks = np.asarray(ld_ranks, dtype=np.int64)
    if hd_ranks.shape != ld_ranks.shape:
        raise ContractError("hd_ranks and ld_ranks must have the same length")
    _check_permutation(hd_ranks, "hd_ranks")
    _check_permutation(ld_ranks, "ld_ranks")
    m = hd_ranks.size
    joins = np.bincount(np.maximum(hd_ranks, ld_ranks), minlength=m + 1)
    return RankProfile(reference_index, np.cumsum(joins[1:]))


def _check_pair(hd, ld) -> tuple[np.ndarray, np.ndarray]:
    hd = as_matrix(hd, "hd")
    ld = as_matrix(ld, "ld")
    if hd.shape[0] != ld.shape[0]:
        raise ShapeError(f"hd has {hd.shape[0]} rows, ld has {ld.shape[0]}")
    if hd.shape[0] < 3:
        raise ShapeError("need at least 3 points")
    return hd, ld


def qnx_from_joins(joins: np.ndarray) -> np.ndarray:
    """Q_NX(K), K = 1..N-1, from summed join counts (``joins[K]``)."""
    n = joins.size
    shared = np.cumsum(joins[1:])
    k = np.arange(1, n, dtype=np.int64)
    # integer numerator and denominator, one rounding
    return shared / (k * n)


def qnx_curve(hd, ld, n_threads: int | None = None) -> np.ndarray:
    """Q_NX(K) for K = 1..N-1 (index K-1)."""
    hd, ld = _check_pair(hd, ld)
    threads = n_threads or default_threads()
    return qnx_from_joins(kernels.join_counts(hd, ld, threads))


def rnx_curve(qnx, n: int) -> np.ndarray:
    """Chance-corrected curve R_NX(K) for K = 1..N-2."""
    qnx = np.asarray(qnx, dtype=np.float64)
    if qnx.size != n - 1:
        raise ShapeError(f"qnx must have N-1 = {n - 1} entries, got {qnx.size}")
    k = np.arange(1, n - 1, dtype=np.float64)
    return ((n - 1) * qnx[: n - 2] - k) / ((n - 1) - k)


def auc_scores(rnx, n: int) -> tuple[float, float]:
    """(local_sp, global_sp): R_NX areas with 1/K and uniform weights.

    Sums use ``math.fsum`` so the result does not depend on summation order.
    """
    rnx = np.asarray(rnx, dtype=np.float64)
    if rnx.size != n - 2:
        raise ShapeError(f"rnx must have N-2 = {n - 2} entries, got {rnx.size}")
    k = np.arange(1, n - 1, dtype=np.float64)
    local = math.fsum(rnx / k) / math.fsum(1.0 / k)
    glob = math.fsum(rnx) / (n - 2)
    return local, glob


def subsample_indices(n: int, size: int, seed: int) -> np.ndarray:
    """Sorted uniform subset of ``size`` row indices, reproducible from ``seed``."""
    if not 3 <= size <= n:
        raise ShapeError(f"subsample must lie in [3, {n}], got {size}")
    if size == n:
        return np.arange(n)
    pick = SeededRng(seed, "subsample").generator.choice(n, size=size, replace=False)
    return np.sort(pick)


def evaluate(hd, ld, subsample: int | None = None, seed: int = 0, n_threads: int | None = None) -> RnxResult:
    """Full R_NX assessment of embedding ``ld`` of data ``hd``.

    Parameters
    ----------
    hd, ld : array_like of shape (N, d) and (N, w)
    subsample : int, optional
        Evaluate on a seeded uniform subset of this many rows.
    seed : int
        Seed of the subsample stream.
    n_threads : int, optional
        Workers for the rank kernel; results do not depend on it.
    """
    hd, ld = _check_pair(hd, ld)
    indices = None
    if subsample is not None:
        indices = subsample_indices(hd.shape[0], int(subsample), seed)
        if indices.size < hd.shape[0]:
            hd = np.ascontiguousarray(hd[indices])
            ld = np.ascontiguousarray(ld[indices])
    n = hd.shape[0]
    qnx = qnx_curve(hd, ld, n_threads)
    rnx = rnx_curve(qnx, n)
    local, glob = auc_scores(rnx, n)
    return RnxResult(
        n=n,
        qnx=qnx,
        rnx=rnx,
        local_sp=local,
        global_sp=glob,
        subsample=None if subsample is None else int(subsample),
        subsample_seed=None if subsample is None else int(seed),
        indices=indices,
    )
