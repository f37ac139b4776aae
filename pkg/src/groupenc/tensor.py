"""Dense float64 matrices, pairwise distances and named random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 with rows
as samples. The helpers here validate that contract and provide the few
kernels other modules share.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "as_matrix",
    "matmul",
    "pairwise_euclidean",
    "condensed_index",
    "SeededRng",
    "rng_shuffle",
    "rng_standard_normal",
]


def as_matrix(a, name: str = "matrix", *, check_finite: bool = True) -> np.ndarray:
    """Return ``a`` as a C-contiguous 2-D float64 array.

    1-D input is not promoted; callers must be explicit about orientation.
    """
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if check_finite and not np.isfinite(m).all():
        raise NumericError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def pairwise_euclidean(points) -> np.ndarray:
    """Condensed Euclidean distances in the order (0,1), (0,2), ..., (n-2,n-1).

    Parameters
    ----------
    points : array_like of shape (n, d)
        At least two rows.

    Returns
    -------
    ndarray of shape (n*(n-1)//2,)
    """
    x = as_matrix(points, "points")
    n = x.shape[0]
    if n < 2:
        raise ShapeError(f"need at least 2 points, got {n}")
    a, b = np.triu_indices(n, k=1)
    diff = x[a] - x[b]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def condensed_index(n: int, i: int, j: int) -> int:
    """Position of pair (i, j), i < j, in a condensed sequence over n points."""
    if not 0 <= i < j < n:
        raise ShapeError(f"invalid pair ({i}, {j}) for n={n}")
    return n * i - i * (i + 1) // 2 + (j - i - 1)


class SeededRng:
    """Reproducible random stream identified by a seed and a text label.

    The stream is a Philox counter-based generator whose 128-bit key is a
    hash of ``(seed, stream_label, *subkeys)``. Distinct labels give
    independent streams under one seed, and the sequence is the same on
    every platform.

    Parameters
    ----------
    seed : int
        Non-negative run seed.
    stream_label : str
        Purpose tag, e.g. ``"init"``, ``"shuffle"``, ``"groups"``, ``"noise"``.
    *subkeys : int or str
        Further qualifiers such as an epoch index.
    """

    def __init__(self, seed: int, stream_label: str, *subkeys):
        self.seed = int(seed)
        self.stream_label = str(stream_label)
        self.subkeys = tuple(subkeys)
        token = "|".join([str(self.seed), self.stream_label, *map(str, self.subkeys)])
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
        key = np.frombuffer(digest, dtype="<u8").astype(np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, *subkeys) -> "SeededRng":
        """Independent stream qualified further by ``subkeys``."""
        return SeededRng(self.seed, self.stream_label, *self.subkeys, *subkeys)

    def __repr__(self) -> str:
        extra = "".join(f", {k!r}" for k in self.subkeys)
        return f"SeededRng({self.seed}, {self.stream_label!r}{extra})"


def rng_shuffle(rng: SeededRng, n: int) -> np.ndarray:
    """Uniformly random permutation of ``0..n-1`` drawn from ``rng``."""
    if n < 1:
        raise ShapeError(f"n must be >= 1, got {n}")
    return rng.generator.permutation(n)


def rng_standard_normal(rng: SeededRng, n: int) -> np.ndarray:
    if n < 1:
        raise ShapeError(f"n must be >= 1, got {n}")
    return rng.generator.standard_normal(n)
