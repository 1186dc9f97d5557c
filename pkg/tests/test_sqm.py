import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarse_lab import coarse_maps as cm, sqm, sublinear as sl
from coarse_lab.boundary import DegenerateQuadruple
from coarse_lab.heintze import HeintzeSpec
from coarse_lab.spaces import HalfPlane, make_rng

H = HalfPlane()
RHO = sqm.visual_metric(H)
SAMPLER = sqm.halfplane_quadruple_sampler(H)


def identity(x):
    return x


@pytest.fixture(scope="module")
def heintze_pair():
    s1, s2 = HeintzeSpec.abelian([1, 1]), HeintzeSpec.abelian([1, 1], jordan=[2])
    X, Y, _ = cm.make_heintze_logmodel_pair(s1, s2)
    return X, Y, sqm.heintze_quasimetric(s1), sqm.heintze_quasimetric(s2)


def test_visual_metric_matches_chordal_half_distance():
    # oracle: |w1 - w2|/2 for the Cayley images on the unit circle
    for x, y in [(0.0, 1.0), (-3.0, 0.5), (2.0, math.inf)]:
        w = [1.0 + 0j if math.isinf(t) else (t - 1j) / (t + 1j) for t in (x, y)]
        assert RHO(H.ideal(x), H.ideal(y)) == pytest.approx(abs(w[0] - w[1]) / 2, rel=1e-12)


def test_log_cross_ratio_values_and_degenerate():
    D = lambda a, b: abs(a - b)
    x, s, diam = sqm.log_cross_ratio(D, (0.0, 1.0, 2.0, 3.0))
    assert x == pytest.approx(math.log(4 / 3)) and s == 0.0 and diam == 3.0
    with pytest.raises(DegenerateQuadruple):
        sqm.log_cross_ratio(D, (0.0, 0.0, 2.0, 3.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_relabel_invariance(seed):
    q = SAMPLER(make_rng(seed))
    a = sqm.log_cross_ratio(RHO, q)
    b = sqm.log_cross_ratio(RHO, (q[1], q[0], q[3], q[2]))
    assert a[0] == pytest.approx(b[0], abs=1e-9) and a[1] == b[1]


def test_identity_check():
    est = sqm.sqm_check(identity, RHO, RHO, SAMPLER, n=1000, seed=0)
    assert est.alpha_lower == pytest.approx(1.0, abs=1e-6)
    assert est.alpha_upper == pytest.approx(1.0, abs=1e-6)
    assert isinstance(est.fitted_v, sl.Constant)
    X, Y, S = est.samples
    assert all(est.bounds_hold(x, y, s) for x, y, s in zip(X, Y, S))
    assert json.loads(est.to_json())["proxy"] == "def"


def test_radial_boundary_map_is_identity_class():
    phi = sqm.boundary_extension(cm.make_radial_sbe(H, sl.PowerLog(0, 1, 0.5, 0)))
    est = sqm.sqm_check(phi, RHO, RHO, sqm.halfplane_quadruple_sampler(H, s_max=30), n=600, seed=1)
    assert est.alpha_lower == pytest.approx(1.0, abs=0.05)
    assert est.alpha_upper == pytest.approx(1.0, abs=0.05)


def test_heintze_boundary_identity_log_class(heintze_pair):
    X, Y, r1, r2 = heintze_pair
    phi = lambda p: Y.ideal(p.coords)
    est = sqm.sqm_check(phi, r1, r2, sqm.heintze_quadruple_sampler(X), n=2000, seed=0)
    assert 0.8 <= est.alpha_lower <= est.alpha_upper <= 1.25
    theta, k = est.fitted_v.growth()
    assert theta < 0.05 and k >= 1


def test_box_proxy_reported():
    gromov = lambda a, b: H.boundary_gromov_product(a, b)
    est = sqm.sqm_check(identity, RHO, RHO, SAMPLER, n=1000, seed=0, proxy="box", gromov=gromov)
    assert est.proxy == "box" and "other_proxy" in est.extra
    with pytest.raises(ValueError):
        sqm.sqm_check(identity, RHO, RHO, SAMPLER, n=10, proxy="box")


def test_too_few_shells():
    with pytest.raises(cm.FitFailure):
        sqm.sqm_check(identity, RHO, RHO, sqm.halfplane_quadruple_sampler(H, s_max=2), n=100)


@pytest.mark.parametrize("alpha", [0.5, 0.8])
def test_holder_model_exponent(alpha):
    fit = sqm.modulus_of_continuity(sqm.power_map(alpha), lambda a, b: abs(a - b), lambda a, b: abs(a - b),
                                    sqm.interval_pair_sampler(), n=3000, seed=0)
    assert fit.lambda_lower == pytest.approx(alpha, abs=0.03)
    assert fit.holder_violations == 0
    assert fit.omega(1e-6) >= (1e-6) ** alpha * (1 - 1e-9)


def test_identity_modulus():
    fit = sqm.modulus_of_continuity(identity, lambda a, b: abs(a - b), lambda a, b: abs(a - b),
                                    sqm.interval_pair_sampler(), n=2000, seed=1)
    assert fit.lambda_lower == pytest.approx(1.0, abs=1e-6)
    assert isinstance(fit.fitted_v, sl.Constant) and fit.violation_rate == 0


def test_compose_with_identity_and_radials():
    ident = sqm.sqm_check(identity, RHO, RHO, SAMPLER, n=1000, seed=0)
    moeb = sqm.sqm_check(sqm.moebius_map(H, 2, 0, 1, 1), RHO, RHO, SAMPLER, n=1000, seed=0)
    c = sqm.compose_sqm(ident, moeb)
    assert (c.alpha_lower, c.alpha_upper) == pytest.approx((moeb.alpha_lower, moeb.alpha_upper))
    r = np.geomspace(1, 100, 20)
    assert np.all(c.fitted_v(r) >= moeb.fitted_v(r) - 1e-12)
    cc = sqm.compose_sqm(ident, ident)
    assert cc.alpha_lower == pytest.approx(1.0) and cc.alpha_upper == pytest.approx(1.0)


def test_compose_mismatch():
    a = sqm.sqm_check(identity, RHO, RHO, SAMPLER, n=500, seed=0, source="A", target="B")
    b = sqm.sqm_check(identity, RHO, RHO, SAMPLER, n=500, seed=0, source="C", target="D")
    with pytest.raises(sqm.SpaceMismatch):
        sqm.compose_sqm(a, b)


def test_composite_envelope_dominates_direct_measurement():
    psi = sqm.moebius_map(H, 2, 0, 1, 1)
    phi = sqm.moebius_map(H, 1, 0, 3, 1)
    e_psi = sqm.sqm_check(psi, RHO, RHO, SAMPLER, n=1500, seed=2)
    e_phi = sqm.sqm_check(phi, RHO, RHO, SAMPLER, n=1500, seed=3)
    pred = sqm.compose_sqm(e_psi, e_phi)
    direct = sqm.sqm_check(lambda p: phi(psi(p)), RHO, RHO, SAMPLER, n=1500, seed=4)
    X, Y, S = direct.samples
    assert all(pred.bounds_hold(x, y, s) for x, y, s in zip(X, Y, S))


def test_annulus_identity_and_threshold():
    A = sqm.AnnulusSpec(H.ideal(0.0), 1e-4, 1e-2)
    D1 = sqm.d1_threshold(1.0, 1.0, 2.0)
    measured, bound = sqm.annulus_image_modulus(identity, A, H, RHO, RHO, 1.0, sl.Constant(1), D1)
    assert measured <= A.modulus + 1e-6 and measured <= bound
    with pytest.raises(sqm.ThresholdExceeded):
        sqm.annulus_image_modulus(identity, sqm.AnnulusSpec(H.ideal(0.0), 0.01, 0.5), H, RHO, RHO,
                                  1.0, sl.Constant(1), D1)
    with pytest.raises(ValueError):
        sqm.AnnulusSpec(H.ideal(0.0), 0.2, 0.1)


def test_annulus_moebius_sweep():
    phi = sqm.moebius_map(H, 2, 0, 1, 1)
    D1 = sqm.d1_threshold(1.0, 1.0, 2.0)
    excess = []
    for r in np.geomspace(1e-8, 1e-3, 6):
        A = sqm.AnnulusSpec(H.ideal(0.0), float(r), float(5 * r))
        measured, bound = sqm.annulus_image_modulus(phi, A, H, RHO, RHO, 1.0, sl.Constant(1), D1, seed=1)
        assert measured <= bound
        excess.append(measured - 2 * A.modulus)
    # bounded excess, no drift with r
    assert max(excess) - min(excess) < 0.5


def test_annulus_log_class(heintze_pair):
    X, Y, r1, r2 = heintze_pair
    phi = lambda p: Y.ideal(p.coords)
    est = sqm.sqm_check(phi, r1, r2, sqm.heintze_quadruple_sampler(X), n=2000, seed=0)
    D1 = sqm.d1_threshold(1.0, 1.0, 2.0)
    rows = []
    for a in (4.0, 8.0, 16.0, 32.0, 64.0):
        r = math.exp(-a)
        A = sqm.AnnulusSpec(X.ideal((0.0, 0.0)), r, 5 * r)
        measured, bound = sqm.annulus_image_modulus(phi, A, X, r1, r2, est.alpha, est.fitted_v, D1,
                                                    n=48, seed=0)
        assert measured <= bound
        rows.append((math.log(a), measured - 2 * A.modulus))
    # excess against log(-log r): a finite slope, far below the linear growth in -log r
    slope = np.polyfit(*zip(*rows), 1)[0]
    assert slope < 4.0
    assert rows[-1][1] < 0.25 * 64.0


def test_uniform_perfectness_halfplane():
    tau = sqm.uniform_perfectness(H, RHO, [H.ideal(0.0), H.ideal(3.0)], [1e-6, 1e-3, 0.1], n_probe=8)
    assert 0.9 <= tau <= 1.0


def test_uniform_perfectness_heintze(heintze_pair):
    X, _, r1, _ = heintze_pair
    tau = sqm.uniform_perfectness(X, r1, [X.ideal((0.0, 0.0))], [1e-4, 1e-2], n_probe=8)
    assert tau > 0.5


def test_quasiball_identity():
    rep = sqm.quasiball_sandwich(identity, H, RHO, RHO, H.ideal(0.0), 1e-3, 2.0, 1.0, sl.Constant(1),
                                 0.5, 2.0, n=16)
    assert rep.radius_inner == pytest.approx(5e-4, rel=1e-6)
    assert rep.ok


def test_quasiball_heintze(heintze_pair):
    X, Y, r1, r2 = heintze_pair
    phi = lambda p: Y.ideal(p.coords)
    w = sl.PowerLog(1, 2, 0.0, 1)
    rep = sqm.quasiball_sandwich(phi, X, r1, r2, X.ideal((0.0, 0.0)), 1e-4, 2.0, 1.0, w, 0.5, 2.0, n=16)
    assert rep.ok
