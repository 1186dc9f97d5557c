import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarse_lab.heintze import HeintzeSpec
from coarse_lab.spaces import (Configuration, DegenerateEndpoints, HalfPlane, HeintzeLog, HyperboloidN,
                               InvalidRegion, ModelMismatch, RayComb, RegularTree, make_rng, make_space)

H = HalfPlane()
T3 = RegularTree(3)


def disk_distance(a, b):
    # independent oracle: Cayley transform to the disk, then 2 artanh of the pseudo-chordal distance
    w1 = (complex(*a.coords) - 1j) / (complex(*a.coords) + 1j)
    w2 = (complex(*b.coords) - 1j) / (complex(*b.coords) + 1j)
    return 2 * math.atanh(abs(w1 - w2) / abs(1 - w1.conjugate() * w2))


def tree_bfs_distance(q, u, v):
    # breadth-first search in the ball of words around the root
    def nbrs(w):
        out = [w[:-1]] if w else []
        k = q if not w else q - 1
        out += [w + (c,) for c in range(k)]
        return out
    seen, frontier, d = {u}, [u], 0
    while frontier:
        if v in frontier:
            return d
        nxt = []
        for w in frontier:
            for x in nbrs(w):
                if x not in seen and len(x) <= max(len(u), len(v)):
                    seen.add(x)
                    nxt.append(x)
        frontier, d = nxt, d + 1
    raise AssertionError


def test_halfplane_example_distance():
    assert H.distance(H.point(0, 1), H.point(1, 1)) == pytest.approx(math.acosh(1.5), abs=1e-12)
    assert math.acosh(1.5) == pytest.approx(0.9624, abs=1e-4)


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-5, 5), st.floats(0.01, 5))
def test_halfplane_distance_matches_disk_oracle(x1, t1, x2, t2):
    a, b = H.point(x1, t1), H.point(x2, t2)
    assert H.distance(a, b) == pytest.approx(disk_distance(a, b), rel=1e-7, abs=1e-7)


def test_distance_zero_on_diagonal():
    rng = make_rng(3)
    for sp in (H, T3, HyperboloidN(3), HeintzeLog(HeintzeSpec.abelian([1, 1]))):
        p = sp.sample_points({"radius": 4}, 1, rng)[0]
        assert sp.distance(p, p) == 0


def test_model_mismatch():
    with pytest.raises(ModelMismatch):
        H.distance(H.basepoint, T3.basepoint)


def test_tree_distance_example_and_bfs():
    a, b = T3.vertex((0, 1)), T3.vertex((1, 0))
    assert T3.distance(a, b) == 4
    rng = make_rng(5)
    pts = T3.sample_points({"radius": 4}, 12, rng)
    for p in pts:
        for q in pts:
            assert T3.distance(p, q) == tree_bfs_distance(3, p.coords, q.coords)


def test_vertical_axis_geodesic():
    g = H.geodesic_between(H.ideal(0.0), H.ideal(math.inf))
    for s in (-3.0, 0.0, 2.5):
        x, t = g.point(s).coords
        assert x == pytest.approx(0.0, abs=1e-12)
        assert t == pytest.approx(math.exp(s), rel=1e-12)


def test_unit_semicircle_geodesic():
    g = H.geodesic_between(H.ideal(-1.0), H.ideal(1.0))
    for s in np.linspace(-4, 4, 9):
        x, t = g.point(float(s)).coords
        assert abs(complex(x, t)) == pytest.approx(1.0, abs=1e-9)
    # parameter 0 at the projection of the basepoint (0, 1), which lies on the circle
    assert g.point(0.0).coords == pytest.approx((0.0, 1.0), abs=1e-9)


def test_degenerate_endpoints():
    with pytest.raises(DegenerateEndpoints):
        H.geodesic_between(H.ideal(2.0), H.ideal(2.0))


@settings(max_examples=40)
@given(st.integers(0, 10 ** 6))
def test_geodesic_unit_speed(seed):
    rng = make_rng(seed)
    for sp in (H, HyperboloidN(3)):
        a, b = sp.sample_points({"radius": 6}, 2, rng)
        if a == b:
            continue
        g = sp.geodesic_between(a, b)
        s, t = rng.uniform(0, g.length, size=2)
        assert abs(sp.distance(g.point(s), g.point(t)) - abs(s - t)) <= 1e-6


def test_projection_to_vertical_axis():
    g = H.geodesic_between(H.ideal(0.0), H.ideal(math.inf))
    p, s = H.project_to_geodesic(g, H.point(3, 4))
    assert p.coords == pytest.approx((0.0, 5.0), abs=1e-7)
    assert s == pytest.approx(math.log(5.0), abs=1e-7)


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6))
def test_projection_optimal(seed):
    rng = make_rng(seed)
    a, b, c = H.sample_points({"radius": 5}, 3, rng)
    g = H.geodesic_between(a, b)
    p, _ = H.project_to_geodesic(g, c)
    d0 = H.distance(c, p)
    for s in rng.uniform(0, g.length, size=20):
        assert H.distance(c, g.point(s)) >= d0 - 1e-6


def test_projection_fixed_point():
    g = H.geodesic_between(H.point(0, 1), H.point(2, 3))
    q = g.point(0.7)
    p, s = H.project_to_geodesic(g, q)
    assert H.distance(p, q) == pytest.approx(0.0, abs=1e-7)
    assert s == pytest.approx(0.7, abs=1e-6)


def test_tree_projection_is_meeting_vertex():
    a, b = T3.vertex((0, 1, 1)), T3.vertex((1, 0, 0))
    g = T3.geodesic_between(a, b)
    p, _ = T3.project_to_geodesic(g, T3.vertex((0, 0, 1)))
    assert p.coords == (0,)


def test_tree_geodesic_between_ends_passes_confluence():
    xi, eta = T3.end((0,), (1,)), T3.end((0, 0), (0,))
    g = T3.geodesic_between(xi, eta)
    # the confluence vertex (0,) is the projection of the root, hence parameter 0
    assert g.point(0).coords == (0,)


def test_sample_configuration_contracts():
    c = H.sample_configuration({"radius": 5}, 1, 0)
    assert c.dist.shape == (1, 1) and c.dist[0, 0] == 0
    c1 = H.sample_configuration({"radius": 5}, 100, 7)
    c2 = H.sample_configuration({"radius": 5}, 100, 7)
    assert np.array_equal(c1.dist, c2.dist)
    c1.check()
    t = T3.sample_configuration({"radius": 6}, 50, 1)
    assert np.all(t.dist == np.round(t.dist)) and t.dist.max() <= 12
    with pytest.raises(InvalidRegion):
        H.sample_configuration({"radius": 5}, 0, 0)
    with pytest.raises(InvalidRegion):
        H.sample_configuration({"radius": math.inf}, 3, 0)


def test_configuration_json_roundtrip():
    c = T3.sample_configuration({"radius": 4}, 10, 2)
    d = Configuration.from_json(c.to_json())
    assert np.array_equal(c.dist, d.dist) and d.points == c.points
    assert set(json.loads(c.to_json())) == {"model", "points", "basepoint", "dist", "seed"}


def test_hyperboloid_points_on_sheet():
    Hn = HyperboloidN(3)
    for p in Hn.sample_points({"radius": 6}, 50, make_rng(1)):
        x = np.asarray(p.coords)
        assert -x[0] ** 2 + np.sum(x[1:] ** 2) == pytest.approx(-1.0, abs=1e-9 * x[0] ** 2)
        assert x[0] > 0


def test_heintze_quasimetric_slack():
    X = HeintzeLog(HeintzeSpec.abelian([1, 1], jordan=[2]))
    A = X.additive_slack(n_triples=3000, seed=0)
    rng = make_rng(9)
    for _ in range(200):
        a, b, c = X.sample_points({"radius": 5}, 3, rng)
        assert X.distance(a, b) == pytest.approx(X.distance(b, a))
        assert X.distance(a, c) <= X.distance(a, b) + X.distance(b, c) + A + 1e-9


def test_raycomb_matches_tree():
    C = RayComb(3)
    rng = make_rng(4)
    pts = C.sample_points({"radius": 12}, 30, rng)
    for p in pts:
        for q in pts:
            assert C.distance(p, q) == T3.distance(T3.vertex(C.to_tree_word(p)), T3.vertex(C.to_tree_word(q)))


def test_tree_end_canonical():
    assert T3.end((0, 1), (1,)) == T3.end((0,), (1, 1))


def test_make_space_names():
    assert isinstance(make_space("h2"), HalfPlane)
    assert isinstance(make_space("tree", valence=4), RegularTree)
    assert isinstance(make_space("comb"), RayComb)


def test_rng_is_deterministic():
    assert np.array_equal(make_rng(11).uniform(size=5), make_rng(11).uniform(size=5))
