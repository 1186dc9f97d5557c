import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarse_lab import hyperbolicity as hy
from coarse_lab.spaces import Configuration, HalfPlane, ModelMismatch, RegularTree, make_rng

H = HalfPlane()
LOG2 = math.log(2.0)


def brute_delta(D):
    # Gromov-product form over all ordered quadruples (w; x, y, z)
    n = len(D)
    gp = lambda x, y, w: 0.5 * (D[x][w] + D[y][w] - D[x][y])
    best = 0.0
    for w, x, y, z in itertools.product(range(n), repeat=4):
        best = max(best, min(gp(x, y, w), gp(y, z, w)) - gp(x, z, w))
    return best


def test_gromov_product_line():
    D = np.array([[0, 3, 5], [3, 0, 2], [5, 2, 0]], float)
    c = Configuration.from_matrix(D)
    assert hy.gromov_product(c, 1, 2, 0) == 3.0
    assert hy.gromov_product(c, 1, 1, 0) == 3.0


def test_gromov_product_star_tree():
    T = RegularTree(3)
    x, y = T.vertex((0, 1)), T.vertex((1, 0))
    assert hy.gromov_product(T, x, y, T.basepoint) == 0


def test_gromov_product_model_mismatch():
    with pytest.raises(ModelMismatch):
        hy.gromov_product(H, H.basepoint, RegularTree(3).basepoint, H.basepoint)


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6))
def test_gromov_product_bounds(seed):
    rng = make_rng(seed)
    o, x, y = H.sample_points({"radius": 6}, 3, rng)
    g = hy.gromov_product(H, x, y, o)
    assert -1e-9 <= g <= min(H.distance(x, o), H.distance(y, o)) + 1e-9
    assert g == pytest.approx(hy.gromov_product(H, y, x, o))


def test_unit_square_delta():
    s = math.sqrt(2)
    D = np.array([[0, 1, s, 1], [1, 0, 1, s], [s, 1, 0, 1], [1, s, 1, 0]])
    est = hy.delta_four_point(Configuration.from_matrix(D))
    assert est.delta == pytest.approx(brute_delta(D), abs=1e-12)
    assert est.delta == pytest.approx(math.sqrt(2) - 1, abs=1e-12)
    assert est.exhaustive


def test_small_configurations():
    assert hy.delta_four_point(Configuration.from_matrix(np.zeros((1, 1)))).delta == 0.0
    assert hy.delta_four_point(Configuration.from_matrix(np.array([[0, 2.0], [2.0, 0]]))).delta == 0.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_delta_matches_brute_force(seed):
    c = H.sample_configuration({"radius": 6}, 7, seed)
    est = hy.delta_four_point(c)
    assert est.delta == pytest.approx(brute_delta(c.dist), abs=1e-9)
    i, j, k, l = est.witness
    assert hy.quadruple_defect(c.dist, (i, j, k, l)) == pytest.approx(est.delta, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_tree_delta_zero(seed):
    c = RegularTree(3).sample_configuration({"radius": 8}, 40, seed)
    assert hy.delta_four_point(c).delta == 0.0


def test_delta_permutation_and_subset():
    c = H.sample_configuration({"radius": 8}, 40, 3)
    d = hy.delta_four_point(c).delta
    perm = make_rng(1).permutation(40)
    assert hy.delta_four_point(c.dist[np.ix_(perm, perm)]).delta == pytest.approx(d, abs=1e-12)
    assert hy.delta_four_point(c.dist[:20, :20]).delta <= d + 1e-12


def test_delta_isometry_invariant():
    rng = make_rng(2)
    pts = H.sample_points({"radius": 6}, 25, rng)
    M = H.random_isometry(rng)
    moved = [H.apply_isometry(M, p) for p in pts]
    d1 = hy.delta_four_point(H.distance_matrix(pts)).delta
    d2 = hy.delta_four_point(H.distance_matrix(moved)).delta
    assert d1 == pytest.approx(d2, abs=1e-6)


def test_halfplane_delta_below_log2():
    c = H.sample_configuration({"radius": 8}, 150, 0)
    assert 0 < hy.delta_four_point(c).delta <= LOG2 + 1e-9


def test_subsampling_flagged():
    c = H.sample_configuration({"radius": 8}, 30, 0)
    est = hy.delta_four_point(c, scan_limit=10, n_subsets=20000)
    assert not est.exhaustive and est.delta <= hy.delta_four_point(c).delta + 1e-12


@pytest.mark.parametrize("lemma", hy.LEMMA_IDS)
def test_audits_hold_and_negative_control_fails(lemma):
    rep = hy.audit_lemma(H, LOG2, lemma, trials=150, seed=1)
    assert rep.ok, rep.violations[:2]
    assert rep.max_observed <= rep.bound
    bad = hy.audit_lemma(H, LOG2, lemma, trials=150, seed=1, corrupt=hy.corrupted_for(H, lemma, LOG2))
    assert not bad.ok


def test_contraction_delta_one_example():
    rep = hy.audit_lemma(H, 1.0, "contraction", trials=2000, seed=4)
    assert rep.ok and rep.bound == 16.0


def test_lined_up_exact():
    rep = hy.audit_lemma(H, LOG2, "lined_up_product", trials=200, seed=0, eta=0.0)
    assert rep.max_observed <= 1e-6 and rep.ok


def test_audit_report_json():
    rep = hy.audit_lemma(H, LOG2, "right_triangle", trials=20, seed=0)
    d = rep.to_dict()
    assert d["lemma_id"] == "right_triangle" and d["bound"] == pytest.approx(28 * LOG2)


def test_audit_bad_inputs():
    with pytest.raises(ValueError):
        hy.audit_lemma(H, LOG2, "nope", trials=10)
    with pytest.raises(ValueError):
        hy.audit_lemma(H, LOG2, "contraction", trials=0)
    with pytest.raises(hy.DeltaTooSmall):
        hy.audit_lemma(H, 1e-3, "contraction", trials=10, pilot=True)
