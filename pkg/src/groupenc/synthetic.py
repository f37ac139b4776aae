"""Seeded Gaussian-mixture benchmark data with local and global structure."""

from __future__ import annotations

import numpy as np

from .tensor import SeededRng


def gaussian_mixture(n: int = 5000, dim: int = 50, clusters: int = 10, seed: int = 0,
                     spread: float = 6.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample a mixture whose centres are the vertices of a random simplex.

    The ``clusters`` vertices are drawn inside a ``clusters - 1`` dimensional
    subspace with axis scales decaying linearly from ``spread`` to
    ``spread / clusters``, so inter-centre distances vary and carry global
    structure, then rotated into ``dim`` dimensions. Each cluster is
    isotropic with variance drawn uniformly from [0.1, 1.0]. Cluster sizes
    are as equal as possible.

    Returns
    -------
    x : ndarray of shape (n, dim)
    labels : ndarray of shape (n,)
    """
    if clusters < 2 or clusters > dim + 1:
        raise ValueError("need 2 <= clusters <= dim + 1")
    gen = SeededRng(seed, "synthetic").generator
    sub = clusters - 1
    axis_scale = np.linspace(spread, spread / clusters, sub)
    vertices = gen.standard_normal((clusters, sub)) * axis_scale
    basis, _ = np.linalg.qr(gen.standard_normal((dim, sub)))
    centres = vertices @ basis.T
    variances = gen.uniform(0.1, 1.0, size=clusters)
    labels = np.arange(n) % clusters
    labels = labels[gen.permutation(n)]
    noise = gen.standard_normal((n, dim)) * np.sqrt(variances[labels])[:, None]
    return centres[labels] + noise, labels
