import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarse_lab import sublinear as sl
from coarse_lab.sublinear import Constant, PowerLog

GOLDEN = (1 + math.sqrt(5)) / 2

powerlogs = st.builds(
    PowerLog,
    a=st.floats(1.0, 5.0),
    b=st.floats(0.0, 3.0),
    theta=st.floats(0.0, 0.9),
    k=st.floats(0.0, 2.0),
)


def grid_sup_ratio(u, tau, r_max=1e6):
    # independent oracle: dense log grid plus the closed-form tail limit
    r = np.concatenate([[0.0], np.geomspace(1e-6, r_max, 200_000)])
    return max(float(np.max(u(tau * r) / u(r))), tau ** u.growth()[0])


def test_evaluate_examples():
    assert Constant(1)(123.0) == 1
    assert PowerLog(1, 1, 0.5, 0)(3.0) == pytest.approx(3.0)
    assert PowerLog(1, 1, 0.0, 1)(0.0) == pytest.approx(2.0)


def test_evaluate_vectorized_and_domain():
    u = PowerLog(1, 2, 0.3, 1)
    r = np.array([0.0, 1.0, 10.0])
    assert np.allclose(u(r), [u(x) for x in r])
    with pytest.raises(ValueError):
        u(-1.0)


def test_invalid_parameters():
    for args in [(1, 1, 1.0, 0), (1, -1, 0.5, 0), (0, 0.5, 0.5, 0), (1, 1, 0.5, -1)]:
        with pytest.raises(sl.InvalidAdmissible):
            PowerLog(*args)
    with pytest.raises(sl.InvalidAdmissible):
        Constant(0.5)


def test_r_epsilon_examples():
    assert sl.r_epsilon(Constant(1), 0.01) == pytest.approx(100.0)
    assert sl.r_epsilon(PowerLog(0, 1, 0.5, 0), 1.0) == pytest.approx(GOLDEN, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(powerlogs, st.floats(0.01, 2.0))
def test_r_epsilon_definition(u, eps):
    R = sl.r_epsilon(u, eps)
    assert R >= 1 / eps * (1 - 1e-12)
    # nothing beyond R violates, and just below R violates or ties
    above = R * np.geomspace(1 + 1e-6, 1e6, 2000)
    assert np.all(u(above) <= eps * above * (1 + 1e-12))
    below = R * (1 - 1e-6)
    assert u(below) >= eps * below * (1 - 1e-6)


def test_uparrow_examples():
    assert sl.uparrow(Constant(3), 2.0) == 1.0
    u = PowerLog(1, 1, 0.5, 0)
    assert sl.uparrow(u, 4.0) == pytest.approx(2.0, abs=1e-6)
    v = PowerLog(0, 1, 0.0, 1)
    val = sl.uparrow(v, 2.0)
    assert 1 < val < 2
    assert val == pytest.approx(grid_sup_ratio(v, 2.0), rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(powerlogs, st.floats(1.1, 8.0))
def test_uparrow_matches_grid(u, tau):
    assert sl.uparrow(u, tau) == pytest.approx(grid_sup_ratio(u, tau), rel=1e-5)


def test_uparrow_rejects_small_tau():
    with pytest.raises(ValueError):
        sl.uparrow(PowerLog(), 1.0)


def test_advance_zero_is_identity():
    u = PowerLog(1, 2, 0.4, 1)
    r = np.linspace(0, 100, 50)
    assert np.array_equal(sl.advance(u, 0)(r), u(r))
    assert sl.advance(u, 5.0)(3.0) == pytest.approx(u(8.0))


@settings(max_examples=30, deadline=None)
@given(powerlogs, st.floats(0.0, 1e4), st.floats(1.1, 6.0))
def test_advance_uparrow_monotone(u, p, tau):
    assert sl.uparrow(sl.advance(u, p), tau) <= sl.uparrow(u, tau) * (1 + 1e-6)


@settings(max_examples=30, deadline=None)
@given(powerlogs, st.floats(0.05, 1.0), st.floats(0.0, 10.0))
def test_advance_r_epsilon_bound(u, eps, extra):
    p = sl.r_epsilon(u, eps / 2) * (1 + extra)
    lhs = sl.r_epsilon(sl.advance(u, p), eps)
    rhs = sl.uparrow(u, 2.0) / eps * u(p)
    assert lhs <= rhs * (1 + 1e-6)


@settings(max_examples=30, deadline=None)
@given(powerlogs)
def test_invariants_on_grid(u):
    assert u.check_invariants()


def test_check_invariants_rejects_superlinear_bag():
    class Linear(sl.AdmissibleFunction):
        def _eval(self, r):
            return 1 + np.asarray(r, float)

        def growth(self):
            return (1.0, 0.0)

    with pytest.raises(sl.InvalidAdmissible):
        Linear().check_invariants()


def test_max_and_sum_bags():
    u, v = PowerLog(1, 1, 0.5, 0), PowerLog(2, 1, 0.0, 1)
    m, s = sl.combine_max(u, v), sl.combine_sum(u, v)
    r = np.geomspace(1e-3, 1e8, 200)
    assert np.allclose(m(r), np.maximum(u(r), v(r)))
    assert np.allclose(s(r), u(r) + v(r))
    assert m.growth() == s.growth() == (0.5, 0.0)
    assert m.check_invariants() and s.check_invariants()


def test_serialization_roundtrip():
    fs = [Constant(2.0), PowerLog(1, 2, 0.3, 1),
          sl.combine_max(PowerLog(1, 1, 0.5, 0), Constant(3)),
          sl.combine_sum(PowerLog(1, 1, 0.2, 0), PowerLog(0, 1, 0.0, 2)),
          sl.advance(PowerLog(1, 1, 0.5, 0), 4.0)]
    r = np.geomspace(1e-3, 1e6, 50)
    for f in fs:
        g = sl.from_dict(json.loads(json.dumps(f.to_dict())))
        assert np.allclose(g(r), f(r))
    assert set(PowerLog().to_dict()) == {"family", "a", "b", "theta", "k"}
    with pytest.raises(sl.InvalidAdmissible):
        sl.from_dict({"family": "Exp"})


def test_sup_level_and_log_class():
    u = PowerLog(1, 1, 0.5, 0)
    assert sl.sup_level(u, 3.0) == pytest.approx(3.0, rel=1e-8)
    assert sl.sup_level(Constant(2), 3.0) == math.inf
    assert sl.sup_level(u, 0.5) == 0.0
    assert sl.is_log_class(PowerLog(1, 1, 0.0, 1))
    assert not sl.is_log_class(PowerLog(1, 1, 0.5, 0))
