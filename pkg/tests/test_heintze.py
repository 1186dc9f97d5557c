import json
import math

import numpy as np
import pytest

from coarse_lab import heintze as hz
from coarse_lab.heintze import HeintzeSpec, SymmetricSpaceId

SPECS = [
    HeintzeSpec.abelian([1, 1]),
    HeintzeSpec.abelian([1, 2]),
    HeintzeSpec.abelian([1, 1], jordan=[2]),
    HeintzeSpec.abelian([1, 1.5, 3]),
    HeintzeSpec.heisenberg(1),
    HeintzeSpec.heisenberg(2),
]


def test_normalize_examples():
    assert hz.normalize(HeintzeSpec.abelian([2, 2])).blocks == ((1.0, 1), (1.0, 1))
    assert hz.normalize(HeintzeSpec.abelian([1, 2])).blocks == ((1.0, 1), (2.0, 1))
    assert hz.normalize(HeintzeSpec.abelian([3, 6])).blocks == ((1.0, 1), (2.0, 1))
    with pytest.raises(hz.NonPositiveEigenvalue):
        HeintzeSpec.abelian([1, -1])


def test_homogeneous_dimension_and_carnot():
    assert hz.homogeneous_dimension(HeintzeSpec.abelian([1, 1])) == 2
    assert hz.homogeneous_dimension(HeintzeSpec.heisenberg(1)) == 4
    for n in range(2, 8):
        assert hz.homogeneous_dimension(HeintzeSpec.abelian([1] * (n - 1))) == n - 1
    assert hz.is_carnot_type(HeintzeSpec.abelian([1, 1]))
    assert not hz.is_carnot_type(HeintzeSpec.abelian([1, 2]))
    assert hz.is_carnot_type(HeintzeSpec.heisenberg(1))
    with pytest.raises(hz.NotNormalized):
        hz.homogeneous_dimension(HeintzeSpec.abelian([2, 3]))


def test_heisenberg_grading_constraint():
    with pytest.raises(hz.HeintzeError):
        HeintzeSpec("heisenberg", 1, ((1.0, 1), (1.0, 1), (3.0, 1)))


def test_spec_json_roundtrip():
    for s in SPECS:
        assert HeintzeSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_quasimetric_examples():
    H1 = HeintzeSpec.heisenberg(1)
    assert hz.homogeneous_quasimetric(H1, [0.3, 0.4, 0.0], [0.3, 0.4, 0.0]) == 0
    assert hz.homogeneous_quasimetric(H1, [0.0, 0.0, 0.0], [0.3, 0.4, 0.0]) == pytest.approx(0.5)
    # Koranyi gauge on the centre: |z|^(1/2)
    assert hz.homogeneous_quasimetric(H1, [0.0, 0.0, 0.0], [0.0, 0.0, 0.25]) == pytest.approx(0.5)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.n_type}{[b for b in s.blocks]}")
def test_dilation_equivariance(spec):
    rng = np.random.default_rng(0)
    s = rng.uniform(-3, 3, 1000)
    n1 = rng.normal(size=(1000, spec.dim))
    n2 = rng.normal(size=(1000, spec.dim))
    lhs = np.array([spec.quasimetric(spec.dilate(a, t), spec.dilate(b, t)) for a, b, t in zip(n1, n2, s)])
    rhs = np.exp(s) * spec.quasimetric(n1, n2)
    assert np.allclose(lhs, rhs, rtol=1e-8)


@pytest.mark.parametrize("spec", SPECS[:3] + SPECS[4:5], ids=str)
def test_left_invariance_and_symmetry(spec):
    rng = np.random.default_rng(1)
    g, a, b = rng.normal(size=(3, 200, spec.dim))
    assert np.allclose(spec.quasimetric(spec.mul(g, a), spec.mul(g, b)), spec.quasimetric(a, b), rtol=1e-8)
    assert np.allclose(spec.quasimetric(a, b), spec.quasimetric(b, a), rtol=1e-8)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_ultrametric_constant_finite(spec):
    K = hz.ultrametric_constant(spec, n_triples=2000, seed=0)
    assert 1.0 <= K < 10.0


def test_box_counting_euclidean():
    est, err = hz.box_counting_dimension(hz.EUCLIDEAN_PLANE, n_points=200_000)
    assert est == pytest.approx(2.0, abs=0.1)
    with pytest.raises(hz.InsufficientScales):
        hz.box_counting_dimension(hz.EUCLIDEAN_PLANE, scales=[0.5, 0.25], n_points=1000)


def test_box_counting_diag12():
    est, _ = hz.box_counting_dimension(HeintzeSpec.abelian([1, 2]), n_points=200_000)
    assert est == pytest.approx(3.0, rel=0.1)


@pytest.mark.parametrize("eigs,expected", [([1, 1], 0.5), ([1, 2], 2 / 3)])
def test_line_count_exponent(eigs, expected):
    fitted, exp_, measures = hz.line_count_scaling(HeintzeSpec.abelian(eigs), [1.0, 0.0],
                                                   np.geomspace(0.05, 1.0, 6), n_samples=2 ** 16)
    assert exp_ == pytest.approx(expected)
    assert fitted == pytest.approx(expected, abs=0.02)


def test_line_count_radius_zero():
    _, _, measures = hz.line_count_scaling(HeintzeSpec.abelian([1, 1]), [1.0, 0.0], [0.0, 0.1, 0.5, 1.0],
                                           n_samples=2 ** 12)
    assert measures[0] == 0


def test_invariants_examples():
    for n in range(2, 9):
        assert hz.symmetric_space_invariants(SymmetricSpaceId("R", n)).as_tuple() == (n, n - 1, n - 1, 0)
    assert hz.symmetric_space_invariants(SymmetricSpaceId("C", 2)).as_tuple() == (4, 3, 4, 1)
    assert hz.symmetric_space_invariants(SymmetricSpaceId("O", 2)).as_tuple() == (16, 15, 22, 7)
    with pytest.raises(hz.InvalidId):
        SymmetricSpaceId("O", 3)
    with pytest.raises(hz.InvalidId):
        SymmetricSpaceId("X", 2)


def test_invariants_match_heintze_specs():
    # p from the derivation trace agrees with the closed formula
    for sid in hz.all_ids(16):
        spec = hz.heintze_spec_for(sid)
        if spec is not None:
            rec = hz.symmetric_space_invariants(sid)
            assert hz.homogeneous_dimension(spec) == rec.p
            assert spec.dim == rec.dim_boundary


def test_distinguishable_examples():
    R, C = (lambda n: SymmetricSpaceId("R", n)), (lambda n: SymmetricSpaceId("C", n))
    assert str(hz.sbe_distinguishable(R(2), R(2))) == "Homothetic"
    assert str(hz.sbe_distinguishable(R(4), C(2))) == "DistinguishedBy(p)"
    assert str(hz.sbe_distinguishable(R(3), C(2))) == "DistinguishedBy(topdim)"


def test_classification_exhaustive():
    records, verdicts = hz.classification_table(32)
    ids = hz.all_ids(32)
    assert len(verdicts) == len(ids) * (len(ids) - 1) // 2
    assert all(v.startswith("DistinguishedBy") for _, _, v in verdicts)
    # invariants are injective on ids
    assert len({r.as_tuple() for r in records.values()}) == len(records)
    assert max(r.dim_X for r in records.values()) <= 32
