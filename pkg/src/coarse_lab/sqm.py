"""Sublinearly quasiMöbius maps on boundaries: cross-ratio checks, annuli, Hölder moduli, composition."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sublinear as sl
from .boundary import DegenerateQuadruple
from .coarse_maps import FitFailure, _jsonable, fit_shell_envelopes, boundary_map
from .heintze import HeintzeSpec
from .spaces import BoundaryPoint, HalfPlane, HeintzeLog, make_rng

MIN_PER_SHELL = 20
MIN_SHELLS = 4


class ThresholdExceeded(ValueError):
    pass


class SpaceMismatch(ValueError):
    pass


@dataclass
class AnnulusSpec:
    center: object
    r: float
    s: float

    def __post_init__(self):
        if not 0 < self.r < self.s:
            raise ValueError("annulus needs 0 < r < s")

    @property
    def modulus(self):
        return math.log(self.s / self.r)


@dataclass
class SqmEstimate:
    alpha_lower: float
    alpha_upper: float
    fitted_v: sl.AdmissibleFunction
    epsilon_scale: float
    residual_table: dict
    nu: float = math.e
    proxy: str = "def"
    source: str = ""
    target: str = ""
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def alpha(self):
        return max(self.alpha_upper, 1.0 / self.alpha_lower)

    def bounds_hold(self, x, y, s):
        """Both cross-ratio inequalities for one (log+ source, log+ image, proxy) triple."""
        v = float(self.fitted_v(max(s, 0.0)))
        return self.alpha_lower * x - v <= y <= self.alpha_upper * x + v

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("alpha_lower", "alpha_upper", "epsilon_scale", "nu",
                                           "proxy", "source", "target", "params", "extra")}
        d["fitted_v"] = self.fitted_v.to_dict()
        d["residual_table"] = {str(k): list(v) for k, v in self.residual_table.items()}
        return _jsonable(d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# -- metrics on boundaries -----------------------------------------------------

def visual_metric(space):
    """rho(xi, eta) = e^-(xi|eta)_o on ideal points; the chordal half-distance for the half-plane."""
    if isinstance(space, HalfPlane):
        return lambda a, b: math.exp(-space.boundary_gromov_product(a, b))
    from .boundary import VisualKernel
    return VisualKernel(space, 0.0, mu=math.e)


def heintze_quasimetric(spec: HeintzeSpec):
    """The gauge quasimetric on N, read on ideal points other than omega or on raw coordinates."""
    def rho(a, b):
        x = np.asarray(a.coords if isinstance(a, BoundaryPoint) else a, float)
        y = np.asarray(b.coords if isinstance(b, BoundaryPoint) else b, float)
        return float(spec.quasimetric(x, y))
    return rho


def log_cross_ratio(rho, quad, nu=math.e):
    """(log+_nu [x1 x2 x3 x4], sup_{i<j} -log_nu rho(xi, xj), max_{i<j} rho(xi, xj))."""
    if len(quad) != 4:
        raise ValueError("need four points")
    r = {}
    for i in range(4):
        for j in range(i + 1, 4):
            d = float(rho(quad[i], quad[j]))
            if not d > 0:
                raise DegenerateQuadruple(f"points {i + 1} and {j + 1} coincide")
            r[i, j] = d
    ln = math.log(nu)
    lr = (math.log(r[0, 2]) + math.log(r[1, 3]) - math.log(r[0, 3]) - math.log(r[1, 2])) / ln
    s = max(-math.log(d) / ln for d in r.values())
    return max(0.0, lr), s, max(r.values())


# -- quadruple samplers ------------------------------------------------------------

def _cluster_quadruple(rng, s_max, dim, g2_max=30.0):
    """Two tight pairs {1,4} and {2,3} at scale e^-S with gaps e^-g, e^-g2, S + g <= s_max.

    The first pair sits at the origin so its gap is exact at any depth; the
    second gap is capped by double precision. The depth S + g is uniform, so
    log+ cross-ratios (about g + g2) cover the range allowed by the proxy.
    """
    depth = rng.uniform(0.0, s_max)
    S = rng.uniform(0.0, depth)
    g = depth - S
    g2 = rng.uniform(0.0, min(g, g2_max))
    sigma = math.exp(-S)

    def unit():
        v = rng.normal(size=dim)
        return v / np.linalg.norm(v)

    c1 = np.zeros(dim)
    c2 = sigma * rng.uniform(0.3, 1.0) * unit()
    x4 = sigma * math.exp(-g) * rng.uniform(0.5, 1.0) * unit()
    x3 = c2 + sigma * math.exp(-g2) * rng.uniform(0.5, 1.0) * unit()
    return [c1, c2, x3, x4]


def halfplane_quadruple_sampler(space, s_max=100.0):
    """Ideal points near 0, where the visual metric is |x - y| up to a factor close to 1."""
    def sample(rng):
        return tuple(space.ideal(float(c[0])) for c in _cluster_quadruple(rng, s_max, 1))
    return sample


def heintze_quadruple_sampler(space, s_max=100.0):
    """Ideal points of a Heintze log model near the origin of N."""
    dim = space.spec.dim

    def sample(rng):
        return tuple(space.ideal(tuple(float(t) for t in c)) for c in _cluster_quadruple(rng, s_max, dim))
    return sample


def boundary_extension(cmap, tol=1e-5):
    """The boundary map of a coarse map as a cached callable on ideal points."""
    cache = {}

    def phi(xi):
        if xi not in cache:
            cache[xi] = boundary_map(cmap, xi, tol=tol)
        return cache[xi]
    return phi


def moebius_map(space, a, b, c, d):
    """x -> (a x + b)/(c x + d) on the boundary of the half-plane, ad - bc > 0."""
    if not a * d - b * c > 0:
        raise ValueError("need ad - bc > 0")

    def phi(xi):
        if xi.is_infinite:
            return space.ideal(math.inf) if c == 0 else space.ideal(a / c)
        x = xi.coords[0]
        den = c * x + d
        return space.ideal(math.inf) if den == 0 else space.ideal((a * x + b) / den)
    return phi


# -- the cross-ratio check ---------------------------------------------------------

def _shell_index(s):
    return int(math.floor(math.log2(max(s, 1.0))))


def _fit_by_shells(S, X, Y, family_hint):
    keys = np.array([_shell_index(s) for s in S])
    shells = [k for k in sorted(set(keys.tolist())) if np.sum(keys == k) >= MIN_PER_SHELL]
    if len(shells) < MIN_SHELLS:
        raise FitFailure(f"only {len(shells)} populated proxy shells")
    dX = {k: X[keys == k] for k in shells}
    dY = {k: Y[keys == k] for k in shells}
    lo, hi, v, E_up, E_low = fit_shell_envelopes(shells, dX, dY, family_hint, slope_rule="tail")
    table = {2.0 ** k: (a, b) for k, a, b in zip(shells, E_up, E_low)}
    return lo, hi, v, table


def sqm_check(phi, rho, theta, quadruple_sampler, n=2000, seed=0, family_hint="auto",
              nu=math.e, epsilon=1.0, proxy="def", gromov=None, source="", target=""):
    """Fit (alpha_lower, alpha_upper, v) to the cross-ratio inequalities on sampled quadruples.

    X = log+_nu of the cross-ratio before, Y after the map. The error is read
    at s = sup -log_nu rho(xi_i, xi_j) (proxy "def"); with proxy "box" and a
    `gromov(a, b)` callable it is read at the sup of Gromov products instead.
    Quadruples whose diameter reaches `epsilon` are skipped and counted.
    """
    if proxy not in ("def", "box"):
        raise ValueError("proxy must be 'def' or 'box'")
    if proxy == "box" and gromov is None:
        raise ValueError("the box proxy needs a gromov callable")
    rng = make_rng(seed)
    X, Y, S_def, S_box = [], [], [], []
    skipped = 0
    for _ in range(n):
        q = quadruple_sampler(rng)
        x, s, diam = log_cross_ratio(rho, q, nu)
        if diam >= epsilon:
            skipped += 1
            continue
        y, _, _ = log_cross_ratio(theta, tuple(phi(p) for p in q), nu)
        X.append(x)
        Y.append(y)
        S_def.append(s)
        if gromov is not None:
            S_box.append(max(gromov(q[i], q[j]) for i in range(4) for j in range(i + 1, 4)))
    X, Y = np.array(X), np.array(Y)
    S = np.array(S_box if proxy == "box" else S_def)
    lo, hi, v, table = _fit_by_shells(S, X, Y, family_hint)
    extra = {"skipped": skipped, "n_used": int(len(X))}
    if gromov is not None:
        other = np.array(S_def if proxy == "box" else S_box)
        try:
            olo, ohi, ov, _ = _fit_by_shells(other, X, Y, family_hint)
            extra["other_proxy"] = {"alpha_lower": olo, "alpha_upper": ohi, "fitted_v": ov.to_dict()}
        except FitFailure as exc:
            extra["other_proxy"] = {"error": str(exc)}
    params = {"n": n, "seed": seed, "family_hint": family_hint, "epsilon": epsilon}
    est = SqmEstimate(lo, hi, v, epsilon, table, nu, proxy, source, target, params, extra)
    est.samples = (X, Y, S)
    return est


# -- Hölder modulus ----------------------------------------------------------------

@dataclass
class ModulusFit:
    lambda_lower: float
    lambda_upper: float
    fitted_v: sl.AdmissibleFunction
    nu: float
    holder_violations: int
    anti_holder_violations: int
    n_pairs: int

    def omega(self, t):
        """exp(lambda_lower log t + v(-log t)), with logs in base nu."""
        ln = math.log(self.nu)
        a = -math.log(t) / ln
        return self.nu ** (-self.lambda_lower * a + float(self.fitted_v(max(a, 0.0))))

    @property
    def violation_rate(self):
        return (self.holder_violations + self.anti_holder_violations) / max(self.n_pairs, 1)

    def to_dict(self):
        d = dict(self.__dict__)
        d["fitted_v"] = self.fitted_v.to_dict()
        return _jsonable(d)


def modulus_of_continuity(phi, rho, theta, pair_sampler, n=3000, seed=0, family_hint="auto", nu=math.e):
    """Fit lambda_lower a - v(a) <= b <= lambda_upper a + v(a) with a = -log rho, b = -log theta of images.

    The lower inequality is the almost-Hölder modulus; both are then checked
    pair by pair. A pair sampler returns (x, y) with rho(x, y) < 1.
    """
    rng = make_rng(seed)
    ln = math.log(nu)
    A, B = [], []
    for _ in range(n):
        x, y = pair_sampler(rng)
        d = float(rho(x, y))
        e = float(theta(phi(x), phi(y)))
        if not (d > 0 and e > 0):
            raise DegenerateQuadruple("pair of coincident points")
        A.append(-math.log(d) / ln)
        B.append(-math.log(e) / ln)
    A, B = np.array(A), np.array(B)
    lo, hi, v, _ = _fit_by_shells(A, A, B, family_hint)
    va = np.asarray(v(np.maximum(A, 0.0)), float)
    holder = int(np.sum(B < lo * A - va - 1e-9))
    anti = int(np.sum(B > hi * A + va + 1e-9))
    return ModulusFit(lo, hi, v, nu, holder, anti, len(A))


def power_map(alpha):
    """t -> t^alpha on [0, 1], the planted Hölder model."""
    return lambda t: t ** alpha


def interval_pair_sampler(a_max=120.0, a_interior=30.0):
    """Pairs in [0, 1] at distances e^-a; half start at 0 (a up to a_max), half inside (a up to a_interior).

    Pairs at 0 are exact at any depth; interior pairs are capped by double precision.
    """
    def sample(rng):
        if rng.uniform() < 0.5:
            return 0.0, math.exp(-rng.uniform(0.0, a_max)) * rng.uniform(0.5, 1.0)
        d = math.exp(-rng.uniform(0.0, a_interior)) * rng.uniform(0.5, 1.0)
        x = rng.uniform(0.0, 1.0)
        return (x, x + d) if x + d <= 1.0 else (x, x - d)
    return sample


# -- composition ----------------------------------------------------------------------

def compose_sqm(est_psi: SqmEstimate, est_phi: SqmEstimate) -> SqmEstimate:
    """Estimate for phi o psi: constants multiply and w = au_psi v_phi + (v_phi up 2/al_phi) v_psi."""
    if est_psi.target and est_phi.source and est_psi.target != est_phi.source:
        raise SpaceMismatch(f"psi lands in {est_psi.target!r}, phi starts at {est_phi.source!r}")
    if not math.isclose(est_psi.nu, est_phi.nu):
        raise SpaceMismatch("estimates use different bases nu")
    v_phi, v_psi = est_phi.fitted_v, est_psi.fitted_v
    tau = 2.0 / est_phi.alpha_lower
    # v is nondecreasing, so a dilation factor tau <= 1 costs nothing
    up = sl.uparrow(v_phi, tau) if tau > 1 else 1.0
    first = sl.Scaled(v_phi, est_psi.alpha_upper) if est_psi.alpha_upper >= 1 else v_phi
    w = sl.combine_sum(first, sl.Scaled(v_psi, up))
    params = {"composed_of": [est_psi.params, est_phi.params], "uparrow": up}
    return SqmEstimate(est_phi.alpha_lower * est_psi.alpha_lower,
                       est_phi.alpha_upper * est_psi.alpha_upper, w,
                       min(est_psi.epsilon_scale, est_phi.epsilon_scale), {},
                       est_phi.nu, est_phi.proxy, est_psi.source, est_phi.target, params, {})


# -- annuli, uniform perfectness, quasiballs ------------------------------------------

def d1_threshold(tau, epsilon, diam):
    """D1 = (tau^4/4)(E min diam/3)."""
    return tau ** 4 / 4.0 * min(epsilon, diam / 3.0)


def point_at_distance(rho, center, d, direction, make_point, t_hi=1.0, iters=80):
    """Point on the coordinate ray center + t direction at rho-distance d, by bisection on t."""
    c = np.asarray(center, float)
    f = lambda t: float(rho(make_point(c), make_point(c + t * direction)))
    hi = t_hi
    while f(hi) < d:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("distance not reached along the ray")
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < d else (lo, mid)
    return make_point(c + hi * direction)


def coordinate_sampler(space):
    """(coordinates of an ideal point, inverse) for the half-plane and Heintze boundaries."""
    if isinstance(space, HalfPlane):
        return (lambda p: np.array([p.coords[0]], float)), (lambda c: space.ideal(float(c[0])))
    if isinstance(space, HeintzeLog):
        return (lambda p: np.array(p.coords, float)), (lambda c: space.ideal(tuple(float(t) for t in c)))
    raise NotImplementedError(type(space).__name__)


def annulus_points(space, rho, A: AnnulusSpec, n, rng):
    """n points of A at rho-distances log-uniform in [r, s), along random coordinate directions."""
    coords, make = coordinate_sampler(space)
    c = coords(A.center)
    out = []
    for _ in range(n):
        d = math.exp(rng.uniform(math.log(A.r), math.log(A.s)))
        u = rng.normal(size=c.size)
        u /= np.linalg.norm(u)
        p = point_at_distance(rho, c, d, u, make, t_hi=max(d, 1e-300))
        if A.r <= rho(A.center, p) < A.s * (1 + 1e-9):
            out.append(p)
    return out


def annulus_image_modulus(phi, A: AnnulusSpec, space, rho, theta, lam, w, D1, n=64, seed=0):
    """(measured modulus of the smallest annulus around phi(center) holding phi(A), 2 lam M + w(-log r))."""
    if A.s > D1:
        raise ThresholdExceeded(f"outer radius {A.s:.3g} exceeds D1 = {D1:.3g}")
    rng = make_rng(seed)
    pts = annulus_points(space, rho, A, n, rng)
    if len(pts) < 2:
        raise ValueError("could not sample the annulus")
    fc = phi(A.center)
    ds = [float(theta(fc, phi(p))) for p in pts]
    measured = math.log(max(ds) / min(ds))
    return measured, 2.0 * lam * A.modulus + float(w(max(-math.log(A.r), 0.0)))


def uniform_perfectness(space, rho, centers, radii, n_probe=32, seed=0):
    """Measured tau: the least, over balls B(c, r), of max rho(c, x)/r over probed x in B.

    A connected boundary gives values close to 1; each ball must be non-empty
    beyond its center for the definition to apply.
    """
    rng = make_rng(seed)
    coords, make = coordinate_sampler(space)
    tau = 1.0
    for c in centers:
        cc = coords(c)
        for r in radii:
            best = 0.0
            for _ in range(n_probe):
                u = rng.normal(size=cc.size)
                u /= np.linalg.norm(u)
                p = point_at_distance(rho, cc, r * (1 - 1e-6), u, make, t_hi=max(r, 1e-300))
                d = float(rho(c, p))
                if d < r:
                    best = max(best, d / r)
            tau = min(tau, best)
    return tau


@dataclass
class QuasiballReport:
    r: float
    radius_inner: float
    radius_outer: float
    factor_bound: float
    radius_ok: bool
    sandwich_ok: bool

    @property
    def ok(self):
        return self.radius_ok and self.sandwich_ok


def quasiball_sandwich(phi, space, rho, theta, center, r, Q, lam, w, alpha, beta, n=64, seed=0):
    """Measure B' (largest ball about phi(center) inside phi(Q^-1 B)) and check the two displayed conditions.

    The inner radius is the least image distance of the sphere of radius r/Q;
    for a connected boundary every image point closer than that lies in
    phi(Q^-1 B). The outer radius is the largest image distance from B.
    """
    rng = make_rng(seed)
    coords, make = coordinate_sampler(space)
    cc = coords(center)
    fc = phi(center)
    inner, outer = math.inf, 0.0
    for _ in range(n):
        u = rng.normal(size=cc.size)
        u /= np.linalg.norm(u)
        p = point_at_distance(rho, cc, r / Q, u, make, t_hi=max(r / Q, 1e-300))
        inner = min(inner, float(theta(fc, phi(p))))
        q = point_at_distance(rho, cc, r * (1 - 1e-9), u, make, t_hi=max(r, 1e-300))
        outer = max(outer, float(theta(fc, phi(q))))
    bound = Q ** lam * math.exp(float(w(max(-math.log(r), 0.0))))
    return QuasiballReport(r, inner, outer, bound,
                           r ** beta <= inner <= r ** alpha, outer <= bound * inner)
