"""Gromov products, four-point hyperbolicity and randomized checks of projection lemmas."""
from __future__ import annotations

import json
import math
import os
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    import numba
    from numba import njit, prange

# keep the outdated system TBB out of the picture
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .spaces import BoundaryPoint, Configuration, HalfPlane, ModelMismatch, Point, make_rng

SCAN_LIMIT = 300
DEFAULT_SUBSETS = 4_000_000
REJECTION_CAP = 100_000
NUMERIC_TOL = 1e-6


class HypothesisUnsatisfiable(RuntimeError):
    pass


class DeltaTooSmall(ValueError):
    pass


def set_threads(n=None):
    """Worker count for the numba kernels; COARSE_LAB_THREADS overrides the default."""
    if n is None:
        n = os.environ.get("COARSE_LAB_THREADS")
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def gromov_product(space_or_config, x, y, o):
    """(x|y)_o = (|x-o| + |y-o| - |x-y|) / 2.

    Accepts a Configuration with integer indices or a ModelSpace with points.
    """
    if isinstance(space_or_config, Configuration):
        D = space_or_config.dist
        return 0.5 * (D[x, o] + D[y, o] - D[x, y])
    sp = space_or_config
    for p in (x, y, o):
        if p.model != sp.tag:
            raise ModelMismatch(f"{p.model} point given to {sp.tag} space")
    d = sp._distance
    return 0.5 * (d(x, o) + d(y, o) - d(x, y))


@dataclass
class DeltaEstimate:
    delta: float
    witness: tuple
    n_points: int
    exhaustive: bool
    n_subsets: int = 0

    def to_dict(self):
        return {"delta": self.delta, "witness": list(self.witness), "n_points": self.n_points,
                "exhaustive": self.exhaustive, "n_subsets": self.n_subsets}


def quadruple_defect(D, q):
    """(S1 - S2)/2 for the three pair sums of the quadruple q."""
    i, j, k, l = q
    s = sorted([D[i, j] + D[k, l], D[i, k] + D[j, l], D[i, l] + D[j, k]], reverse=True)
    return 0.5 * (s[0] - s[1])


@njit(parallel=True, cache=True)
def _scan_exhaustive(D):
    n = D.shape[0]
    best = np.zeros(n)
    wit = np.zeros((n, 3), dtype=np.int64)
    for i in prange(n):
        b = 0.0
        wj, wk, wl = -1, -1, -1
        for j in range(i + 1, n):
            dij = D[i, j]
            for k in range(j + 1, n):
                dik = D[i, k]
                djk = D[j, k]
                for l in range(k + 1, n):
                    s1 = dij + D[k, l]
                    s2 = dik + D[j, l]
                    s3 = D[i, l] + djk
                    if s1 < s2:
                        s1, s2 = s2, s1
                    if s2 < s3:
                        s2, s3 = s3, s2
                    if s1 < s2:
                        s1, s2 = s2, s1
                    v = s1 - s2
                    if v > b:
                        b = v
                        wj, wk, wl = j, k, l
        best[i] = b
        wit[i, 0] = wj
        wit[i, 1] = wk
        wit[i, 2] = wl
    return best, wit


@njit(parallel=True, cache=True)
def _scan_subsets(D, Q):
    m = Q.shape[0]
    out = np.empty(m)
    for t in prange(m):
        i, j, k, l = Q[t, 0], Q[t, 1], Q[t, 2], Q[t, 3]
        s1 = D[i, j] + D[k, l]
        s2 = D[i, k] + D[j, l]
        s3 = D[i, l] + D[j, k]
        if s1 < s2:
            s1, s2 = s2, s1
        if s2 < s3:
            s2, s3 = s3, s2
        if s1 < s2:
            s1, s2 = s2, s1
        out[t] = s1 - s2
    return out


def delta_four_point(config, scan_limit=SCAN_LIMIT, n_subsets=DEFAULT_SUBSETS, seed=0):
    """Smallest delta for which the four-point condition holds on the configuration.

    The Gromov-product form (x|z)_w >= min((x|y)_w, (y|z)_w) - delta over all
    ordered quadruples is equivalent to delta = max (S1 - S2)/2 over unordered
    4-sets, S1 >= S2 >= S3 being the three sums of opposite pairs.
    """
    D = np.ascontiguousarray(config.dist if isinstance(config, Configuration) else config, dtype=float)
    n = D.shape[0]
    if n < 4:
        # repeated indices always make two pair sums equal
        return DeltaEstimate(0.0, tuple(range(n)) + (0,) * (4 - n), n, True)
    if n <= scan_limit:
        best, wit = _scan_exhaustive(D)
        i = int(np.argmax(best))  # first maximal i
        if best[i] <= 0:
            return DeltaEstimate(0.0, (0, 1, 2, 3), n, True)
        return DeltaEstimate(0.5 * float(best[i]), (i,) + tuple(int(x) for x in wit[i]), n, True)
    rng = make_rng(seed)
    Q = _random_4subsets(rng, n, n_subsets)
    vals = _scan_subsets(D, Q)
    top = vals.max()
    hits = Q[vals == top]
    order = np.lexsort(hits.T[::-1])
    w = tuple(int(x) for x in hits[order[0]])
    return DeltaEstimate(0.5 * float(max(top, 0.0)), w, n, False, int(n_subsets))


def _random_4subsets(rng, n, k):
    out = np.empty((0, 4), dtype=np.int64)
    while out.shape[0] < k:
        m = int((k - out.shape[0]) * 1.05) + 16
        Q = np.sort(rng.integers(0, n, size=(m, 4)), axis=1)
        ok = (Q[:, 0] < Q[:, 1]) & (Q[:, 1] < Q[:, 2]) & (Q[:, 2] < Q[:, 3])
        out = np.concatenate([out, Q[ok]])
    return out[:k]


# -- audits ----------------------------------------------------------------

LEMMA_IDS = ("contraction", "connectedness", "lined_up_product", "right_triangle",
             "quadrilateral", "projection_sup", "linear_divergence")

BOUND_FACTORS = {
    "contraction": 16.0,
    "connectedness": 16.0,
    "right_triangle": 28.0,
    "quadrilateral": 56.0,
    "projection_sup": 284.0,
    "linear_divergence": 56.0,
}


@dataclass
class AuditReport:
    lemma_id: str
    trials: int
    bound: float
    max_observed: float
    violations: list = field(default_factory=list)
    rejections: int = 0
    seed: int = 0
    params: dict = field(default_factory=dict)

    @property
    def margin(self):
        return self.bound - self.max_observed

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"lemma_id": self.lemma_id, "trials": self.trials, "bound": self.bound,
                "max_observed": self.max_observed, "margin": self.margin,
                "violations": self.violations, "rejections": self.rejections,
                "acceptance_rate": self.trials / max(1, self.trials + self.rejections),
                "seed": self.seed, "params": self.params}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


class CorruptedDistance:
    """Distance plus symmetric pseudo-random noise that breaks the triangle inequality.

    d'(a, b) = d(a, b) (1 + relative h) + additive h', with h, h' in [-1, 1]
    hashed from the pair. Used as the negative control for the audits.
    """

    def __init__(self, space, relative=0.5, additive=0.0, seed=0):
        self.space = space
        self.relative = relative
        self.additive = additive
        self.salt = int(seed) & 0xFFFFFFFF

    def _noise(self, a, b, k):
        ka = zlib.crc32(repr(a.coords).encode(), self.salt)
        kb = zlib.crc32(repr(b.coords).encode(), self.salt)
        h = zlib.crc32(f"{min(ka, kb)}:{max(ka, kb)}:{k}".encode())
        return (h / 0xFFFFFFFF) * 2.0 - 1.0

    def __call__(self, a, b):
        if a == b:
            return 0.0
        d = self.space._distance(a, b)
        return d * (1.0 + self.relative * self._noise(a, b, 0)) + self.additive * self._noise(a, b, 1)


def corrupted_for(space, lemma_id, delta, seed=0):
    """Negative-control distance whose additive noise is twice the lemma's bound."""
    scale = 5.0 * delta if lemma_id == "lined_up_product" else BOUND_FACTORS[lemma_id] * delta
    return CorruptedDistance(space, relative=0.5, additive=2.0 * scale, seed=seed)


def _pt_repr(p):
    if isinstance(p, BoundaryPoint):
        return {"ideal": list(p.coords)}
    return list(p.coords)


class _Geometry:
    """Audit geometry on the half-plane: random frames, segments and lines."""

    def __init__(self, space, rng, radius):
        if not isinstance(space, HalfPlane):
            raise NotImplementedError("audits are implemented on the HalfPlane model")
        self.sp = space
        self.rng = rng
        self.R = radius

    def iso(self):
        return self.sp.random_isometry(self.rng)

    def random_point(self):
        r = self.rng.uniform(0.0, self.R)
        return self.sp.exp_point(self.sp.basepoint, r, self.rng.uniform(0, 2 * math.pi))

    def random_line(self):
        while True:
            a, b = self.sp.sample_ideal(self.rng), self.sp.sample_ideal(self.rng)
            if a != b:
                return self.sp.geodesic_between(a, b)

    def axis_point(self, u):
        return Point(self.sp.tag, (0.0, math.exp(u)))


def audit_lemma(space, delta, lemma_id, trials=10_000, seed=0, *, eta=None, radius=6.0,
                corrupt=None, pilot=False, cap=REJECTION_CAP):
    """Sample hypothesis-satisfying configurations and compare both sides of a lemma.

    `corrupt` may be a distance callable (see CorruptedDistance) used to evaluate
    the inequalities; geometry is always constructed exactly.
    """
    if lemma_id not in LEMMA_IDS:
        raise ValueError(f"unknown lemma {lemma_id!r}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if pilot:
        est = delta_four_point(space.sample_configuration({"radius": radius}, 60, seed))
        if delta < est.delta - 1e-9:
            raise DeltaTooSmall(f"delta={delta} is below the pilot estimate {est.delta}")
    rng = make_rng(seed)
    geo = _Geometry(space, rng, radius)
    dist = corrupt if corrupt is not None else space._distance
    if lemma_id == "lined_up_product":
        eta = delta if eta is None else eta
        bound = 5.0 * eta
    else:
        bound = BOUND_FACTORS[lemma_id] * delta
    sampler = _SAMPLERS[lemma_id]
    worst = -math.inf
    violations = []
    rejections = 0
    streak = 0
    done = 0
    while done < trials:
        try:
            obs, witness = sampler(geo, dist, delta, eta)
        except _Reject:
            rejections += 1
            streak += 1
            if streak >= cap:
                raise HypothesisUnsatisfiable(
                    f"{lemma_id}: {rejections} rejections after {done} accepted trials")
            continue
        done += 1
        streak = 0
        worst = max(worst, obs)
        if obs > bound + NUMERIC_TOL:
            if len(violations) < 20:
                violations.append({"trial": done - 1, "observed": obs, "witness": witness})
            else:
                violations.append({"trial": done - 1, "observed": obs})
    return AuditReport(lemma_id, trials, bound, worst, violations, rejections, seed,
                       {"delta": delta, "eta": eta, "radius": radius, "corrupted": corrupt is not None})


class _Reject(Exception):
    pass


def _seg_dist(sp, dist, p, a, b):
    """Distance from p to the segment [a, b]."""
    g = sp.geodesic_between(a, b)
    q, _ = sp.project_to_geodesic(g, p)
    return dist(p, q)


def _s_contraction(geo, dist, delta, eta):
    sp = geo.sp
    g = geo.random_line()
    b, b2 = geo.random_point(), geo.random_point()
    c = g.point(geo.rng.uniform(-geo.R, geo.R))
    pb, _ = sp.project_to_geodesic(g, b)
    pb2, _ = sp.project_to_geodesic(g, b2)
    first = dist(c, pb) - dist(b, c) + dist(b, pb)
    second = dist(pb, pb2) - dist(b, b2)
    return max(first, second), [_pt_repr(x) for x in (b, b2, c)]


def _s_connectedness(geo, dist, delta, eta):
    sp = geo.sp
    g = geo.random_line()
    a, b = geo.random_point(), geo.random_point()
    if a == b:
        raise _Reject
    seg = sp.geodesic_between(a, b)
    alpha = 0.25
    k = max(2, int(math.ceil(seg.length / alpha)) + 1)
    S = [seg.point(seg.length * i / (k - 1)) for i in range(k)]
    step = max(dist(S[i], S[i + 1]) for i in range(k - 1))
    P = [sp.project_to_geodesic(g, x) for x in S]
    P.sort(key=lambda t: t[1])
    gap = max(dist(P[i][0], P[i + 1][0]) for i in range(k - 1))
    return gap - step, [_pt_repr(a), _pt_repr(b)]


def _s_lined_up(geo, dist, delta, eta):
    sp = geo.sp
    M = geo.iso()
    L = geo.rng.uniform(0.0, 3 * geo.R)
    us = np.sort(geo.rng.uniform(0.0, L, 3))
    ys = [geo.axis_point(u) for u in us]
    xs = []
    for y in ys:
        r = geo.rng.uniform(0.0, eta) if eta > 0 else 0.0
        xs.append(sp.exp_point(y, r, geo.rng.uniform(0, 2 * math.pi)))
    # sigma is the axis segment [y1, y3]; projections must stay in order and inside
    proj = [0.5 * math.log(x.coords[0] ** 2 + x.coords[1] ** 2) for x in xs]
    if not (us[0] <= proj[0] <= proj[1] <= proj[2] <= us[2]):
        raise _Reject
    x1, x2, x3 = (sp.apply_isometry(M, x) for x in xs)
    gp = 0.5 * (dist(x2, x1) + dist(x3, x1) - dist(x2, x3))
    return abs(gp - dist(x1, x2)), [_pt_repr(x) for x in (x1, x2, x3)]


def _s_right_triangle(geo, dist, delta, eta):
    sp = geo.sp
    g = geo.random_line()
    b = geo.random_point()
    a, sa = sp.project_to_geodesic(g, b)
    c = g.point(sa + geo.rng.uniform(-2 * geo.R, 2 * geo.R))
    if c == b:
        raise _Reject
    return _seg_dist(sp, dist, a, b, c), [_pt_repr(x) for x in (a, b, c)]


def _s_quadrilateral(geo, dist, delta, eta):
    sp = geo.sp
    L = 138.0 * delta + geo.rng.uniform(0.0, 4 * geo.R)
    # sigma is centred on the basepoint; a rotation would push the far ends
    # onto the real axis and lose precision
    a = [geo.axis_point(-L / 2), geo.axis_point(L / 2)]
    # b_i leaves a_i at an angle >= pi/2 from the direction of a_(1-i): this covers
    # both a_i = p_sigma(b_i) and a_i = p_{gamma_i}(a_(1-i))
    phi0 = geo.rng.uniform(math.pi, 2 * math.pi)
    phi1 = geo.rng.uniform(0.0, math.pi)
    b = [sp.exp_point(a[0], geo.rng.uniform(0.0, 2 * geo.R), phi0),
         sp.exp_point(a[1], geo.rng.uniform(0.0, 2 * geo.R), phi1)]
    # a translation would swamp the tiny coordinates near 0, so dilate only
    tau = geo.rng.uniform(-2.0, 2.0)
    M = np.array([[math.exp(tau / 2), 0.0], [0.0, math.exp(-tau / 2)]])
    a = [sp.apply_isometry(M, x) for x in a]
    b = [sp.apply_isometry(M, x) for x in b]
    if dist(a[0], a[1]) < 138.0 * delta or b[0] == b[1]:
        raise _Reject
    obs = max(_seg_dist(sp, dist, a[i], b[0], b[1]) for i in (0, 1))
    return obs, [_pt_repr(x) for x in a + b]


def _s_projection_sup(geo, dist, delta, eta):
    sp = geo.sp
    ends = [sp.sample_ideal(geo.rng) for _ in range(4)]
    if len(set(ends)) < 4:
        raise _Reject
    g = sp.geodesic_between(ends[0], ends[1])
    g2 = sp.geodesic_between(ends[2], ends[3])
    box = max(sp.boundary_gromov_product(ends[i], ends[j]) for i in range(4) for j in range(i + 1, 4))
    o = sp.basepoint
    # sup over b in g2: dense parameter sweep plus the two ideal limits
    sup = 0.0
    for s in np.linspace(-40.0, 40.0, 161):
        pb, _ = sp.project_to_geodesic(g, g2.point(float(s)))
        sup = max(sup, dist(o, pb))
    for e in ends[2:]:
        pb = g.point(sp.projection_parameter(g, e))
        sup = max(sup, dist(o, pb))
    return sup - box, [_pt_repr(x) for x in ends]


def _s_linear_divergence(geo, dist, delta, eta):
    sp = geo.sp
    ends = [sp.sample_ideal(geo.rng) for _ in range(4)]
    if len(set(ends)) < 4:
        raise _Reject
    g1 = sp.geodesic_between(ends[0], ends[1])
    g2 = sp.geodesic_between(ends[2], ends[3])
    Delta = sp.line_distance(g1, g2)
    s1, s2 = geo.rng.uniform(-2 * geo.R, 2 * geo.R, 2)
    x1, x2 = g1.point(float(s1)), g2.point(float(s2))

    def to_shadow(g, other, s):
        # distance along g from g(s) to p_g(im other) = interval between projected ends
        lo, hi = sorted(sp.projection_parameter(g, e) for e in (other.start, other.end))
        return max(lo - s, 0.0, s - hi)

    rhs = Delta + max(to_shadow(g1, g2, s1), to_shadow(g2, g1, s2))
    return rhs - dist(x1, x2), [_pt_repr(x) for x in ends] + [float(s1), float(s2)]


_SAMPLERS = {
    "contraction": _s_contraction,
    "connectedness": _s_connectedness,
    "lined_up_product": _s_lined_up,
    "right_triangle": _s_right_triangle,
    "quadrilateral": _s_quadrilateral,
    "projection_sup": _s_projection_sup,
    "linear_divergence": _s_linear_divergence,
}
