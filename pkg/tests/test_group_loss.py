import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import ortho_group

from conftest import central_difference, max_relative_error
from groupenc.errors import ConfigError, ShapeError
from groupenc.group_loss import (
    GroupAssignment,
    assign_groups,
    batch_group_loss,
    batch_group_loss_detailed,
    group_cost,
    group_geometry,
    normalize_group_distances,
)
from groupenc.tensor import SeededRng


# -- independent oracles ------------------------------------------------------


def brute_group_cost(hd_points, ld_points):
    """Direct transcription: pairwise distances with math.dist, ratios, squares."""
    pairs = list(itertools.combinations(range(len(hd_points)), 2))
    hd = [math.dist(hd_points[i], hd_points[j]) for i, j in pairs]
    ld = [math.dist(ld_points[i], ld_points[j]) for i, j in pairs]
    sh, sl = math.fsum(hd), math.fsum(ld)
    return math.fsum((a / sh - b / sl) ** 2 for a, b in zip(hd, ld))


def squadmds_quartet_cost(hd4, ld4):
    """Quartet stress as written for stochastic quartet MDS: the six
    distances of quartet (a,b,c,d), each relative to their total."""
    a, b, c, d = range(4)
    six = [(a, b), (a, c), (a, d), (b, c), (b, d), (c, d)]
    dh = [np.linalg.norm(hd4[i] - hd4[j]) for i, j in six]
    dl = [np.linalg.norm(ld4[i] - ld4[j]) for i, j in six]
    th, tl = sum(dh), sum(dl)
    return sum((x / th - y / tl) ** 2 for x, y in zip(dh, dl))


def brute_batch_loss(hd, ld, groups):
    return math.fsum(brute_group_cost(hd[list(g)], ld[list(g)]) for g in groups) / len(groups)


QUARTET_HD = np.array([[0.0], [1.0], [2.0], [3.0]])
QUARTET_LD = np.array([[0.0], [1.0], [2.0], [4.0]])


class TestNormalize:
    def test_quartet(self):
        out = normalize_group_distances([1, 2, 3, 1, 2, 1])
        np.testing.assert_allclose(out, [0.1, 0.2, 0.3, 0.1, 0.2, 0.1], rtol=1e-12)

    def test_equilateral(self):
        np.testing.assert_allclose(normalize_group_distances(np.full(6, 2.5)), np.full(6, 1 / 6), rtol=1e-12)

    @pytest.mark.parametrize("c", [1.0, 17.3, 1e6])
    def test_scale_free(self, rng, c):
        raw = 1 + rng.random(10)
        np.testing.assert_allclose(normalize_group_distances(c * raw), normalize_group_distances(raw), rtol=1e-12)

    @pytest.mark.parametrize("c", [1e-6, 0.1])
    def test_guard_effect_bounded(self, rng, c):
        # The 1e-12 denominator guard shifts a profile by about 1e-12/sum
        # relative, so tiny groups are scale-free only up to that amount.
        raw = rng.random(10)
        bound = 2e-12 / (c * raw.sum()) + 1e-15
        np.testing.assert_allclose(normalize_group_distances(c * raw), normalize_group_distances(raw), rtol=bound)

    def test_degenerate_is_uniform(self):
        np.testing.assert_array_equal(normalize_group_distances(np.zeros(6)), np.full(6, 1 / 6))

    def test_bad_length(self):
        with pytest.raises(ShapeError):
            normalize_group_distances([1.0, 2.0])


class TestGroupCost:
    def test_quartet_value(self):
        expected = brute_group_cost(QUARTET_HD, QUARTET_LD)
        assert expected == pytest.approx(7.10e-3, abs=5e-6)
        g, _ = group_cost(QUARTET_HD, QUARTET_LD)
        assert g == pytest.approx(expected, rel=1e-12)
        geo = group_geometry(QUARTET_HD, QUARTET_LD)
        np.testing.assert_allclose(geo.ld_norm, np.array([1, 2, 4, 1, 3, 2]) / 13, rtol=1e-12)
        np.testing.assert_allclose(geo.hd_norm, [0.1, 0.2, 0.3, 0.1, 0.2, 0.1], rtol=1e-12)

    def test_scaled_copy(self):
        g, _ = group_cost(QUARTET_HD, 2 * QUARTET_HD)
        assert g == pytest.approx(0.0, abs=1e-20)

    def test_isometry(self, rng):
        hd = rng.normal(size=(5, 3))
        ld = hd @ ortho_group.rvs(3, random_state=1) + 4.0
        g, grad = group_cost(hd, ld)
        assert g < 1e-28
        assert np.abs(grad).max() < 1e-12

    def test_matches_brute_force(self, rng):
        for gamma in (2, 3, 4, 6, 9):
            hd, ld = rng.normal(size=(gamma, 7)), rng.normal(size=(gamma, 3))
            assert group_cost(hd, ld)[0] == pytest.approx(brute_group_cost(hd, ld), rel=1e-12)

    def test_squadmds_anchor(self, rng):
        # gamma=4 with disjoint groups is the quartet loss from stochastic quartet MDS
        for _ in range(20):
            hd, ld = rng.normal(size=(4, 5)), rng.normal(size=(4, 2))
            asg = GroupAssignment(4, np.array([[0, 1, 2, 3]]), "disjoint", 4)
            loss, _ = batch_group_loss(hd, ld, asg)
            assert loss == pytest.approx(squadmds_quartet_cost(hd, ld), rel=1e-12)

    def test_gradient(self, rng):
        hd, ld = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
        _, grad = group_cost(hd, ld)
        numeric = central_difference(lambda: group_cost(hd, ld)[0], [ld])
        assert max_relative_error([grad], numeric) < 1e-4

    def test_degenerate_ld(self):
        g, grad = group_cost(QUARTET_HD, np.ones((4, 2)))
        assert np.isfinite(g) and 0 <= g <= 2
        np.testing.assert_array_equal(grad, 0.0)

    def test_zero_length_pair(self, rng):
        ld = rng.normal(size=(4, 2))
        ld[1] = ld[0]
        g, grad = group_cost(rng.normal(size=(4, 3)), ld)
        assert np.isfinite(g) and np.isfinite(grad).all()

    def test_bounds_10k_groups(self):
        gen = np.random.default_rng(9)
        hd = gen.normal(size=(10**4, 5, 6)) * gen.exponential(size=(10**4, 1, 1))
        ld = gen.standard_cauchy(size=(10**4, 5, 2))
        costs = [group_cost(h, l)[0] for h, l in zip(hd, ld)]
        assert min(costs) >= 0 and max(costs) <= 2


class TestAssignGroups:
    def test_headed_full_rotation(self):
        asg = assign_groups(4, 4, "headed", SeededRng(0, "groups"))
        assert asg.n_groups == 4
        rows = [tuple(r) for r in asg.groups]
        base = rows[0]
        rotations = {base[k:] + base[:k] for k in range(4)}
        assert set(rows) == rotations
        assert [r[0] for r in rows] == [0, 1, 2, 3]

    def test_disjoint_drops_remainder(self):
        asg = assign_groups(10, 4, "disjoint", SeededRng(0, "groups"))
        assert asg.groups.shape == (2, 4)
        assert len(set(asg.groups.ravel().tolist())) == 8

    @pytest.mark.parametrize("b,gamma", [(8, 4), (13, 5), (512, 6)])
    def test_headed_invariants(self, b, gamma):
        asg = assign_groups(b, gamma, "headed", SeededRng(1, "groups"))
        assert sorted(asg.groups[:, 0].tolist()) == list(range(b))
        np.testing.assert_array_equal(asg.groups[:, 0], np.arange(b))
        assert all(len(set(r)) == gamma for r in asg.groups.tolist())
        assert asg.groups.min() >= 0 and asg.groups.max() < b

    def test_deterministic(self):
        a = assign_groups(50, 4, "headed", SeededRng(2, "groups")).groups
        b = assign_groups(50, 4, "headed", SeededRng(2, "groups")).groups
        np.testing.assert_array_equal(a, b)

    def test_all_pairs_co_occur(self):
        b, gamma = 12, 4
        seen = np.zeros((b, b), dtype=bool)
        rng = SeededRng(3, "groups")
        for _ in range(300):
            for row in assign_groups(b, gamma, "headed", rng).groups:
                for i, j in itertools.combinations(row, 2):
                    seen[i, j] = seen[j, i] = True
        assert seen[~np.eye(b, dtype=bool)].all()

    def test_errors(self):
        with pytest.raises(ConfigError):
            assign_groups(3, 4, "headed", SeededRng(0, "groups"))
        with pytest.raises(ConfigError):
            assign_groups(8, 4, "random", SeededRng(0, "groups"))


class TestBatchLoss:
    def test_similarity_zero(self, rng):
        hd = rng.normal(size=(20, 3))
        ld = 2.5 * hd @ ortho_group.rvs(3, random_state=5) - 1.0
        asg = assign_groups(20, 5, "headed", SeededRng(0, "groups"))
        loss, grad = batch_group_loss(hd, ld, asg)
        assert loss < 1e-28 and np.abs(grad).max() < 1e-12

    def test_one_group_per_rotation(self):
        asg = assign_groups(4, 4, "headed", SeededRng(0, "groups"))
        loss, _ = batch_group_loss(QUARTET_HD, QUARTET_LD, asg)
        oracle = brute_batch_loss(QUARTET_HD, QUARTET_LD, asg.groups.tolist())
        assert loss == pytest.approx(oracle, rel=1e-12)
        assert loss == pytest.approx(brute_group_cost(QUARTET_HD, QUARTET_LD), rel=1e-12)

    @pytest.mark.parametrize("strategy", ["headed", "disjoint"])
    def test_matches_brute_force(self, rng, strategy):
        hd, ld = rng.normal(size=(14, 6)), rng.normal(size=(14, 2))
        asg = assign_groups(14, 4, strategy, SeededRng(4, "groups"))
        res = batch_group_loss_detailed(hd, ld, asg)
        assert res.loss == pytest.approx(brute_batch_loss(hd, ld, asg.groups.tolist()), rel=1e-12)

    @pytest.mark.parametrize("strategy,gamma", [("headed", 4), ("headed", 6), ("disjoint", 4), ("disjoint", 5)])
    def test_gradient(self, rng, strategy, gamma):
        hd, ld = rng.normal(size=(11, 5)), rng.normal(size=(11, 2))
        asg = assign_groups(11, gamma, strategy, SeededRng(5, "groups"))
        _, grad = batch_group_loss(hd, ld, asg)
        numeric = central_difference(lambda: batch_group_loss(hd, ld, asg)[0], [ld])
        assert max_relative_error([grad], numeric) < 1e-4
        if strategy == "disjoint":
            unused = np.setdiff1d(np.arange(11), asg.groups.ravel())
            np.testing.assert_array_equal(grad[unused], 0.0)

    @pytest.mark.parametrize("c", [0.1, 1.0, 17.3])
    def test_scale_invariance(self, rng, c):
        hd, ld = rng.normal(size=(32, 10)), rng.normal(size=(32, 2))
        asg = assign_groups(32, 4, "headed", SeededRng(6, "groups"))
        base, _ = batch_group_loss(hd, ld, asg)
        scaled, _ = batch_group_loss(hd, c * ld, asg)
        assert abs(scaled - base) <= 1e-9 * base

    def test_degenerate_counted(self):
        hd = np.zeros((4, 3))
        ld = np.zeros((4, 2))
        asg = assign_groups(4, 4, "disjoint", SeededRng(0, "groups"))
        res = batch_group_loss_detailed(hd, ld, asg)
        assert res.degenerate_hd == 1 and res.degenerate_ld == 1
        assert res.loss == 0.0 and not res.grad.any()

    def test_mismatch(self, rng):
        asg = assign_groups(8, 4, "headed", SeededRng(0, "groups"))
        with pytest.raises(ShapeError):
            batch_group_loss(rng.normal(size=(9, 3)), rng.normal(size=(9, 2)), asg)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, (5, 2), elements=finite))
def test_property_cost_bounded_and_finite(hd, ld):
    g, grad = group_cost(hd, ld)
    assert 0.0 <= g <= 2.0
    assert np.isfinite(grad).all()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 2), elements=st.floats(-10, 10)), st.floats(0.01, 100))
def test_property_scale_invariance(ld, c):
    hd = np.arange(12, dtype=float).reshape(4, 3) ** 1.5
    total = group_geometry(hd, ld).ld_raw.sum()
    if total < 1e-3:
        return
    # relative tolerance widens only where the 1e-12 guard is comparable to the distance sum
    rel = max(1e-9, 8e-12 / min(total, c * total))
    assert group_cost(hd, c * ld)[0] == pytest.approx(group_cost(hd, ld)[0], rel=rel, abs=1e-15)
