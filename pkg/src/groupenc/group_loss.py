"""Group loss: scale-free comparison of distance profiles inside small groups.

Within a group of ``gamma`` points every pairwise distance is divided by the
sum of all pairwise distances of the group. The group cost is the squared
Euclidean distance between the high- and low-dimensional normalised
profiles. A batch loss averages group costs; for ``gamma=4`` one group cost
is exactly the stochastic quartet cost.

Pairs inside a group are always enumerated in condensed order
(0,1), (0,2), ..., (gamma-2, gamma-1).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import SeededRng, as_matrix

NORM_EPS = 1e-12
STRATEGIES = ("headed", "disjoint")


@dataclass(frozen=True)
class GroupAssignment:
    gamma: int
    groups: np.ndarray  # (n_groups, gamma) int64 indices into the batch
    strategy: str
    batch_size: int

    @property
    def n_groups(self) -> int:
        return self.groups.shape[0]


@dataclass
class GroupGeometry:
    hd_raw: np.ndarray
    ld_raw: np.ndarray
    hd_norm: np.ndarray
    ld_norm: np.ndarray
    cost: float


@dataclass
class BatchLossResult:
    loss: float
    grad: np.ndarray
    costs: np.ndarray
    degenerate_hd: int
    degenerate_ld: int


@lru_cache(maxsize=32)
def _pair_index(gamma: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.triu_indices(gamma, k=1)
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


def _gamma_from_pairs(n_pairs: int) -> int:
    gamma = int(round((1 + np.sqrt(1 + 8 * n_pairs)) / 2))
    if gamma < 2 or gamma * (gamma - 1) // 2 != n_pairs:
        raise ShapeError(f"{n_pairs} is not gamma*(gamma-1)/2 for any gamma >= 2")
    return gamma


def _normalise(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise profile normalisation of (..., P) raw distances.

    Degenerate rows (all zero) get the uniform profile.
    Returns (normalised, denominators, degenerate mask).
    """
    total = raw.sum(axis=-1)
    degenerate = total <= 0.0
    denom = total + NORM_EPS
    out = raw / denom[..., None]
    if degenerate.any():
        out[degenerate] = 1.0 / raw.shape[-1]
    return out, denom, degenerate


def normalize_group_distances(raw) -> np.ndarray:
    """Divide condensed within-group distances by their sum.

    An all-zero input (coincident group) maps to the uniform profile.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ShapeError("expected a 1-D condensed distance sequence")
    _gamma_from_pairs(raw.size)
    if (raw < 0).any():
        raise ContractError("distances must be non-negative")
    out, _, _ = _normalise(raw[None, :])
    return out[0]


def _group_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray):
    """points (G, gamma, k) -> differences (G, P, k) and distances (G, P)."""
    diff = points[:, a, :] - points[:, b, :]
    dist = np.sqrt(np.einsum("gpk,gpk->gp", diff, diff))
    return diff, dist


def _grouped_costs(hd_groups: np.ndarray, ld_groups: np.ndarray):
    """Costs and LD coordinate gradients for a stack of groups.

    hd_groups : (G, gamma, d); ld_groups : (G, gamma, w)
    Returns costs (G,), grads (G, gamma, w), degenerate HD/LD masks.
    """
    gamma = hd_groups.shape[1]
    a, b = _pair_index(gamma)
    _, hd_dist = _group_distances(hd_groups, a, b)
    ld_diff, ld_dist = _group_distances(ld_groups, a, b)
    hd_norm, _, hd_deg = _normalise(hd_dist)
    ld_norm, ld_denom, ld_deg = _normalise(ld_dist)

    resid = hd_norm - ld_norm
    costs = np.einsum("gp,gp->g", resid, resid)

    # d cost / d ld_norm_p = -2 resid_p
    # d ld_norm_p / d ld_dist_q = [p == q] / S - ld_dist_p / S^2
    upstream = -2.0 * resid
    weighted = np.einsum("gp,gp->g", upstream, ld_dist) / (ld_denom * ld_denom)
    d_dist = upstream / ld_denom[:, None] - weighted[:, None]
    d_dist[ld_deg] = 0.0

    # d ld_dist_q / d y_a = (y_a - y_b) / dist_q; zero-length pairs get the zero subgradient
    safe = np.where(ld_dist > 0.0, ld_dist, 1.0)
    scale = np.where(ld_dist > 0.0, d_dist / safe, 0.0)
    pair_grad = ld_diff * scale[:, :, None]
    grads = np.zeros_like(ld_groups)
    for p in range(a.size):
        grads[:, a[p], :] += pair_grad[:, p, :]
        grads[:, b[p], :] -= pair_grad[:, p, :]
    return costs, grads, hd_deg, ld_deg


def group_geometry(hd_points, ld_points) -> GroupGeometry:
    """Raw and normalised profiles of a single group, plus its cost."""
    hd = as_matrix(hd_points, "hd_points")
    ld = as_matrix(ld_points, "ld_points")
    if hd.shape[0] != ld.shape[0]:
        raise ShapeError("hd_points and ld_points must have the same number of rows")
    if hd.shape[0] < 2:
        raise ShapeError("a group needs at least 2 points")
    a, b = _pair_index(hd.shape[0])
    _, hd_raw = _group_distances(hd[None], a, b)
    _, ld_raw = _group_distances(ld[None], a, b)
    hd_norm, _, _ = _normalise(hd_raw)
    ld_norm, _, _ = _normalise(ld_raw)
    resid = hd_norm[0] - ld_norm[0]
    return GroupGeometry(hd_raw[0], ld_raw[0], hd_norm[0], ld_norm[0], float(resid @ resid))


def group_cost(hd_points, ld_points) -> tuple[float, np.ndarray]:
    """Cost of one group and its gradient with respect to ``ld_points``.

    Parameters
    ----------
    hd_points : array_like of shape (gamma, d)
    ld_points : array_like of shape (gamma, w)

    Returns
    -------
    cost : float
        In [0, 2].
    grad : ndarray of shape (gamma, w)
    """
    hd = as_matrix(hd_points, "hd_points")
    ld = as_matrix(ld_points, "ld_points")
    if hd.shape[0] != ld.shape[0]:
        raise ShapeError("hd_points and ld_points must have the same number of rows")
    if hd.shape[0] < 2:
        raise ShapeError("a group needs at least 2 points")
    costs, grads, _, _ = _grouped_costs(hd[None], ld[None])
    return float(costs[0]), grads[0]


def assign_groups(batch_size: int, gamma: int, strategy: str = "headed", rng: SeededRng | None = None) -> GroupAssignment:
    """Draw groups of ``gamma`` batch indices.

    ``headed``: a random cyclic order of the batch is drawn and point ``i``
    heads the group made of itself and the ``gamma-1`` points following it
    in that order, so there are ``batch_size`` overlapping groups and row
    ``k`` of ``groups`` starts with ``k``.

    ``disjoint``: a random permutation is cut into ``batch_size // gamma``
    consecutive groups; leftover points are not used.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown group strategy {strategy!r}; expected one of {STRATEGIES}")
    if gamma < 2:
        raise ConfigError(f"gamma must be >= 2, got {gamma}")
    if batch_size < gamma:
        raise ConfigError(f"batch_size {batch_size} is smaller than gamma {gamma}")
    if rng is None:
        raise ConfigError("assign_groups needs an rng")
    order = rng.generator.permutation(batch_size)
    if strategy == "headed":
        offsets = np.arange(gamma)
        cyclic = order[(np.arange(batch_size)[:, None] + offsets[None, :]) % batch_size]
        groups = np.empty_like(cyclic)
        groups[cyclic[:, 0]] = cyclic
    else:
        n_groups = batch_size // gamma
        groups = order[: n_groups * gamma].reshape(n_groups, gamma)
    return GroupAssignment(gamma, groups.astype(np.int64), strategy, batch_size)


def batch_group_loss_detailed(hd_batch, ld_batch, assignment: GroupAssignment) -> BatchLossResult:
    hd = as_matrix(hd_batch, "hd_batch")
    ld = as_matrix(ld_batch, "ld_batch")
    if hd.shape[0] != ld.shape[0]:
        raise ShapeError(f"hd_batch has {hd.shape[0]} rows, ld_batch has {ld.shape[0]}")
    if hd.shape[0] != assignment.batch_size:
        raise ShapeError(f"assignment is for {assignment.batch_size} points, batch has {hd.shape[0]}")
    groups = assignment.groups
    costs, grads, hd_deg, ld_deg = _grouped_costs(hd[groups], ld[groups])
    n_groups = groups.shape[0]
    # headed: per-point value is its own group's cost, so the mean over points is the mean over groups;
    # disjoint: each covered point carries its group's cost, again the mean over groups
    weight = 1.0 / n_groups
    grad = np.zeros_like(ld)
    flat_idx = groups.reshape(-1)
    flat_grad = (grads * weight).reshape(-1, ld.shape[1])
    np.add.at(grad, flat_idx, flat_grad)
    return BatchLossResult(
        loss=float(costs.sum() * weight),
        grad=grad,
        costs=costs,
        degenerate_hd=int(hd_deg.sum()),
        degenerate_ld=int(ld_deg.sum()),
    )


def batch_group_loss(hd_batch, ld_batch, assignment: GroupAssignment) -> tuple[float, np.ndarray]:
    """Mean group cost over the batch and its gradient w.r.t. ``ld_batch``."""
    res = batch_group_loss_detailed(hd_batch, ld_batch, assignment)
    return res.loss, res.grad
