"""Sublinearly biLipschitz maps: examples, constant estimation, quasigeodesics and tracking.

Conventions. A map f is a (lam_lo, lam_hi, v)-embedding when

    lam_lo |x - x'| - v(|x| v |x'|) <= |f(x) - f(x')| <= lam_hi |x - x'| + v(|x| v |x'|).

A single constant lam >= 1 stands for (1/lam, lam). Paths are maps from R
(or R>=0) with basepoint 0, so their error term is read at max(|t|, |t'|).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar, nnls

from . import sublinear as sl
from .heintze import HeintzeSpec
from .spaces import (BoundaryPoint, HalfPlane, HeintzeLog, HyperboloidN, NonConvergence, Point, RayComb,
                     RegularTree, make_rng)

K_NO_ROUND_TRIP = 5
EXPONENT_CUTOFF = 0.9
# float slack when comparing measured deviations with a bound
VERIFY_ATOL = 1e-9
ENVELOPE_QUANTILE = 0.99
SLOPE_RANGE = (1e-3, 1e3)


class FitFailure(RuntimeError):
    pass


class IncompatibleSpecs(ValueError):
    pass


class HypothesisViolated(ValueError):
    pass


class HypothesisUnsatisfied(ValueError):
    def __init__(self, clause, msg=""):
        super().__init__(f"clause {clause}: {msg}" if msg else f"clause {clause}")
        self.clause = clause


class UnboundedRequired(ValueError):
    pass


class BudgetViolated(RuntimeError):
    pass


# -- maps ----------------------------------------------------------------

@dataclass
class CoarseMap:
    source: object
    target: object
    evaluator: object
    label: str = ""
    inverse_hint: object = None

    def __call__(self, x):
        return self.evaluator(x)

    def norm_source(self, x):
        return self.source.distance(self.source.basepoint, x)

    def norm_target(self, y):
        return self.target.distance(self.target.basepoint, y)


def identity_map(space):
    return CoarseMap(space, space, lambda x: x, "identity", inverse_hint=lambda y: y)


def radial_point(space, x, s):
    """Point at distance s from the basepoint on the geodesic ray from o through x."""
    o = space.basepoint
    if s <= 0 or x == o:
        return o
    if isinstance(space, HalfPlane):
        line, origin, sign = space.geodesic_between(o, x).frame
        return Point(space.tag, space._line_point(line, origin + sign * s))
    if isinstance(space, HyperboloidN):
        return space.from_polar(s, x.coords[1:])
    if isinstance(space, RegularTree):
        L = int(round(s))
        w = x.coords
        # past x the ray continues with letter 0, a fixed reduced choice
        return Point(space.tag, w[:L] if L <= len(w) else w + (0,) * (L - len(w)))
    raise NotImplementedError(f"radial maps are not available on {type(space).__name__}")


def make_radial_sbe(space, u, sign=1):
    """x at distance r from o goes to the point at distance max(0, r + sign u(r)) on the same ray."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    o = space.basepoint

    def f(x):
        if x == o:
            return o
        r = space.distance(o, x)
        return radial_point(space, x, max(0.0, r + sign * float(u(r))))

    def g(y):
        # best preimage on the ray through y: solve r + sign u(r) = |y| by bisection
        s = space.distance(o, y)
        h = lambda r: r + sign * float(u(r)) - s
        lo, hi = 0.0, max(1.0, 2 * s)
        while h(hi) < 0:
            hi *= 2
        if h(lo) >= 0:
            return o
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if h(mid) < 0 else (lo, mid)
        return radial_point(space, y, hi)

    return CoarseMap(space, space, f, f"radial({sign:+d})", inverse_hint=g)


def make_tree_stretch(tree):
    """Letter doubling on reduced words: an exact homothety of ratio 2 of the tree."""
    q = tree.q

    def f(x):
        w = x.coords
        if not w:
            return x
        out = [w[0], min(w[0], q - 2)]
        for c in w[1:]:
            out.extend((c, c))
        return Point(tree.tag, tuple(out))

    return CoarseMap(tree, tree, f, "stretch2")


def make_heintze_logmodel_pair(spec1: HeintzeSpec, spec2: HeintzeSpec):
    """Identity on (N-coordinates, height) between two log models with equal semisimple data."""
    if spec1.n_type != spec2.n_type or spec1.dim != spec2.dim:
        raise IncompatibleSpecs("specs live on different groups")
    if not np.allclose(np.sort(spec1.eigenvalues), np.sort(spec2.eigenvalues)):
        raise IncompatibleSpecs("specs have different eigenvalues")
    X, Y = HeintzeLog(spec1), HeintzeLog(spec2)
    f = lambda p: Point(Y.tag, p.coords)
    inv = lambda q: Point(X.tag, q.coords)
    return X, Y, CoarseMap(X, Y, f, "heintze-identity", inverse_hint=inv)


# -- estimation of SBE constants -------------------------------------------

@dataclass
class SbeEstimate:
    lambda_lower: float
    lambda_upper: float
    fitted_v: object
    shell_residuals: dict
    surjectivity_defect: dict
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lambda_lower": self.lambda_lower, "lambda_upper": self.lambda_upper,
                "fitted_v": self.fitted_v.to_dict(),
                "shell_residuals": {str(k): list(v) for k, v in self.shell_residuals.items()},
                "surjectivity_defect": {str(k): v for k, v in self.surjectivity_defect.items()},
                "params": self.params}


def default_scale(space):
    """Largest radius at which points of the model are represented without overflow."""
    if isinstance(space, RegularTree):
        return 4096.0
    if isinstance(space, HeintzeLog):
        return 512.0
    # beyond this radius nearby points of the half-plane and hyperboloid models stop
    # being distinguishable in double precision
    return 32.0


def _shell_points(space, k, n, rng):
    """n points with |x| in [2^k, 2^(k+1))."""
    lo, hi = 2.0 ** k, 2.0 ** (k + 1)
    o = space.basepoint
    out = []
    for _ in range(200):
        pts = space.sample_points({"radius": hi, "law": "uniform_radius", "include_basepoint": False},
                                  max(4 * (n - len(out)), 16), rng)
        for p in pts:
            if lo <= space.distance(o, p) < hi:
                out.append(p)
        if len(out) >= n:
            return out[:n]
    raise FitFailure(f"could not sample shell [{lo}, {hi})")


def _ball_point(space, R, rng):
    p = space.sample_points({"radius": max(R, 1e-9), "law": "uniform_radius",
                             "include_basepoint": False}, 1, rng)
    return p[0]


def _sample_pairs(space, shells, per_shell, rng):
    o = space.basepoint
    out = {}
    for k in shells:
        xs = _shell_points(space, k, per_shell, rng)
        pairs = []
        for i, x in enumerate(xs):
            mode = i % 3
            if mode == 0:
                y = o
            elif mode == 1:
                y = _ball_point(space, space.distance(o, x), rng)
            else:
                y = xs[(i * 7 + 1) % len(xs)]
            pairs.append((x, y))
        out[k] = pairs
    return out


def _exponent(shells, env):
    """Log-log slope of max(env, 1) against the shell radius over the top three shells."""
    ks = np.asarray(shells, float)
    e = np.log2(np.maximum(np.asarray(env, float), 1.0))
    m = 3
    return float(np.polyfit(ks[-m:], e[-m:], 1)[0])


def _bisect_slope(pred, increasing):
    """Boundary of {lam : pred(lam)} in SLOPE_RANGE, searched on a log scale."""
    a, b = math.log(SLOPE_RANGE[0]), math.log(SLOPE_RANGE[1])
    good_end = b if increasing else a
    if not pred(math.exp(good_end)):
        raise FitFailure("no slope in [1e-3, 1e3] gives sublinear residual envelopes")
    bad_end = a if increasing else b
    if pred(math.exp(bad_end)):
        return math.exp(bad_end)
    lo, hi = bad_end, good_end
    for _ in range(60):
        m = 0.5 * (lo + hi)
        if pred(math.exp(m)):
            hi = m
        else:
            lo = m
    return math.exp(hi)


FAMILY_GRIDS = {
    "constant": [(0.0, 0.0)],
    "log": [(0.0, k) for k in (0.0, 0.5, 1.0, 1.5, 2.0)],
    "power": [(0.0, 0.0)] + [(t, 0.0) for t in np.arange(0.05, 0.951, 0.05)],
}
FAMILY_GRIDS["auto"] = sorted(set(FAMILY_GRIDS["log"] + FAMILY_GRIDS["power"]))


def _fit_score(r, env, family_hint):
    return _fit_grid(np.asarray(r, float), np.maximum(np.asarray(env, float), 1.0), family_hint)[0]


def _fit_grid(r, env, family_hint):
    n = len(r)
    best = None
    for theta, k in FAMILY_GRIDS[family_hint]:
        if theta == 0 and k == 0:
            a, b = float(env.mean()), 0.0
            sse = float(np.sum((env - a) ** 2))
            p = 1
        else:
            g = (1 + r) ** theta * np.log(math.e + r) ** k
            (a, b), res = nnls(np.column_stack([np.ones(n), g]), env)
            sse = float(res ** 2)
            p = 3
        score = n * math.log(sse / n + 1e-6 * float(np.mean(env ** 2))) + p * math.log(n)
        if best is None or score < best[0] - 1e-9:
            best = (score, theta, k, a, b)
    return best


def fit_admissible(r, env, family_hint="auto"):
    """Least-squares a + b (1+r)^theta log^k(e+r) over a (theta, k) grid, then lifted to dominate env.

    The grid point is chosen by BIC; the constant member counts one parameter,
    the others three.
    """
    r = np.asarray(r, float)
    # admissible functions are >= 1, so residuals below 1 carry no information
    env = np.maximum(np.asarray(env, float), 1.0)
    _, theta, k, a, b = _fit_grid(r, env, family_hint)
    g = (1 + r) ** theta * np.log(math.e + r) ** k
    # growth under one unit over the whole range is indistinguishable from a constant
    if b * float(g.max() - g.min()) < 1.0:
        b = 0.0
    if b == 0:
        return sl.Constant(max(1.0, float(env.max())))
    fit = sl.PowerLog(max(a, 1.0 - b), b, float(theta), float(k))
    lift = float(np.max(env - fit(r)))
    if lift > 0:
        fit = sl.PowerLog(fit.a + lift, b, float(theta), float(k))
    return fit


def fit_shell_envelopes(shells, dX, dY, family_hint="auto", slope_rule="bic"):
    """Slopes and error function from per-shell samples of (|x - x'|, |f x - f x'|).

    Returns (lam_lo, lam_hi, fitted v, upper envelopes, lower envelopes), the
    envelopes taken at the returned slopes. Shell k stands for radius 2^k.
    When the two slope bounds cross, `slope_rule` picks one slope: "bic" by
    the fit score of the envelope, "tail" by the least envelope on the
    outermost shell.
    """
    q = 100 * ENVELOPE_QUANTILE
    up = lambda lam: [float(np.percentile(dY[k] - lam * dX[k], q)) for k in shells]
    low = lambda lam: [float(np.percentile(lam * dX[k] - dY[k], q)) for k in shells]
    lam_hi = _bisect_slope(lambda lam: _exponent(shells, up(lam)) < EXPONENT_CUTOFF, increasing=True)
    lam_lo = _bisect_slope(lambda lam: _exponent(shells, low(lam)) < EXPONENT_CUTOFF, increasing=False)
    if lam_lo > lam_hi:
        # every slope in [lam_hi, lam_lo] works both ways: take the one whose envelope is
        # best explained by an admissible function, ties going to the middle
        grid = np.exp(np.linspace(math.log(lam_hi), math.log(lam_lo), 101))
        radii = [2.0 ** k for k in shells]
        if slope_rule == "tail":
            cost = [max(up(g)[-1], low(g)[-1]) for g in grid]
        else:
            cost = [_fit_score(radii, [max(a, b, 0.0) for a, b in zip(up(g), low(g))], family_hint)
                    for g in grid]
        best = min(cost)
        hits = [g for g, c in zip(grid, cost) if c <= best + 1e-6 * (1 + abs(best))]
        lam_lo = lam_hi = float(math.sqrt(hits[0] * hits[-1]))
        i = int(np.argmin(cost))
        if slope_rule == "tail" and len(hits) == 1 and 0 < i < len(grid) - 1:
            # an isolated minimum sits between grid nodes; refine it on the two adjacent cells
            tail = lambda lg: max(up(math.exp(lg))[-1], low(math.exp(lg))[-1])
            res = minimize_scalar(tail, bounds=(math.log(grid[i - 1]), math.log(grid[i + 1])),
                                  method="bounded", options={"xatol": 1e-12})
            if res.fun <= best:
                lam_lo = lam_hi = float(math.exp(res.x))
    E_up, E_low = up(lam_hi), low(lam_lo)
    radii = [2.0 ** k for k in shells]
    env = [max(a, b, 0.0) for a, b in zip(E_up, E_low)]
    return lam_lo, lam_hi, fit_admissible(radii, env, family_hint), E_up, E_low


def estimate_sbe_constants(cmap, n_pairs=3000, R_max=None, seed=0, family_hint="auto",
                           n_surj=40):
    if n_pairs < 100:
        raise ValueError("need n_pairs >= 100")
    X, Y = cmap.source, cmap.target
    R_max = default_scale(X) if R_max is None else R_max
    K = int(math.floor(math.log2(R_max))) - 1
    shells = list(range(0, K + 1))
    if len(shells) < 4:
        raise ValueError("R_max too small for a shell fit")
    rng = make_rng(seed)
    per = max(30, n_pairs // len(shells))
    pairs = _sample_pairs(X, shells, per, rng)
    dX, dY = {}, {}
    for k in shells:
        dX[k] = np.array([X.distance(a, b) for a, b in pairs[k]])
        dY[k] = np.array([Y.distance(cmap(a), cmap(b)) for a, b in pairs[k]])
    lam_lo, lam_hi, v, E_up, E_low = fit_shell_envelopes(shells, dX, dY, family_hint)
    radii = [2.0 ** k for k in shells]
    residuals = {r: (a, b) for r, a, b in zip(radii, E_up, E_low)}
    surj = {r: _surjectivity_gap(cmap, k, n_surj, rng) for r, k in zip(radii, shells)}
    return SbeEstimate(lam_lo, lam_hi, v, residuals, surj,
                       {"n_pairs": n_pairs, "R_max": R_max, "seed": seed, "family_hint": family_hint})


def _surjectivity_gap(cmap, k, n, rng):
    """Max over sampled y in the k-th target shell of the distance to the image."""
    X, Y = cmap.source, cmap.target
    ys = _shell_points(Y, k, n, rng)
    worst = 0.0
    for y in ys:
        if cmap.inverse_hint is not None:
            cands = [cmap.inverse_hint(y)]
        else:
            cands = [X.basepoint]
            if X.tag == Y.tag:
                r = Y.distance(Y.basepoint, y)
                cands += [radial_point(X, y, s) for s in np.linspace(0.0, r, 65)[1:]]
        worst = max(worst, min(Y.distance(cmap(x), y) for x in cands))
    return worst


# -- explicit constants ----------------------------------------------------

def _up(v, tau):
    """v uparrow tau, with the convention that it is 1 for tau <= 1 (v is nondecreasing)."""
    return 1.0 if tau <= 1 else sl.uparrow(v, tau)


def embedding_thresholds(lam, f_o_norm, v):
    """(t_circle, R_circle, v_hat) for a (lam, v)-embedding with |f(o)| = f_o_norm."""
    if lam < 1 or f_o_norm < 0:
        raise ValueError("need lam >= 1 and |f(o)| >= 0")
    t = max(sl.r_epsilon(v, 1.0 / (3 * lam)), 3 * lam * f_o_norm)
    R = max(4 * f_o_norm, 2 * (2 * lam + 1) * t)
    v_hat = sl.Scaled(v, _up(v, 3 * lam))
    return t, R, v_hat


def h_morse(lam):
    return 12.0 * (1 + 8 * lam ** 2)


def h_anti(lam):
    return 16.0 * (5 + 6 * lam ** 2)


def morse_bounds(lam, delta, c):
    """(h, h_tilde, h (delta + c), h_tilde (delta + c)); needs c >= 6 lam^2 delta."""
    if c < 6 * lam ** 2 * delta * (1 - 1e-12):
        raise HypothesisViolated(f"c = {c} < 6 lam^2 delta = {6 * lam ** 2 * delta}")
    h, ht = h_morse(lam), h_anti(lam)
    return h, ht, h * (delta + c), ht * (delta + c)


def m_prime(lam_lo, delta):
    """log_mu(2 / (1 - mu^(-3 lam_lo / 4))) with mu = 2^(1/delta), or e when delta = 0."""
    mu = math.e if delta == 0 else 2.0 ** (1.0 / delta)
    return math.log(2.0 / (1.0 - mu ** (-0.75 * lam_lo))) / math.log(mu)


@dataclass
class TrackingConstants:
    t_circle: float
    R_circle: float
    v_hat_ref: float
    H: float
    H_tilde: float
    t_track: float
    R_track: float
    R_sqcap: float
    K: int
    H2: float
    H2_tilde: float
    R_tilde: float
    J: float
    R_final: float
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        d = dict(self.__dict__)
        d["provenance"] = {k: (v.to_dict() if hasattr(v, "to_dict") else v)
                           for k, v in self.provenance.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def tracking_radii(lam, delta, v, L=None, require_unbounded=True):
    """Every tracking constant of the ray and geodesic tracking chain, evaluated literally.

    `v_hat_ref` is the multiplier v uparrow 3 lam of v_hat = (v uparrow 3 lam) v.
    """
    if lam < 1 or delta < 0:
        raise ValueError("need lam >= 1 and delta >= 0")
    L = 9.0 * lam ** 2 if L is None else float(L)
    if L < 1:
        raise ValueError("need L >= 1")
    if require_unbounded and v.growth() == (0.0, 0.0):
        raise UnboundedRequired("ray tracking needs an unbounded v")
    lam_lo = 1.0 / lam
    r = lambda eps: sl.r_epsilon(v, eps)
    lev = lambda c: sl.sup_level(v, c)
    h, ht = h_morse(lam), h_anti(lam)
    P = {"lam": lam, "delta": delta, "L": L, "v": v}

    # embedding thresholds for a path with gamma~(0) = o
    t_circ, R_circ, _ = embedding_thresholds(lam, 0.0, v)
    up_3l = _up(v, 3 * lam)
    Mp = m_prime(lam_lo, delta)
    up_T = _up(v, 1 + 8 * lam ** 2)
    t0 = max(r(lam), 4 * lam * Mp + 1)
    t1 = max(t_circ, lev(delta), 3 * lam * r(1.0 / (2 * h * up_T)), 12 * lam * delta, t0)
    t2 = max(t1, lev(6 * lam ** 2 * delta) / (1 + 8 * lam ** 2))
    t3 = max(t2, lev(h * delta))
    H0 = 2 * h * up_T + 1
    t4 = max(t3, r(lam_lo / (2 + 2 * H0)))
    t5 = max(t4, lev(8 * delta))
    t_track = max(t5, 16 * delta)
    H = 1 + H0
    t6 = lev(16 * delta)
    t7 = max(t6, t_circ)
    t8 = max(t7, r(lam_lo / (6 * H)))
    R8 = t8 / (6 * lam)
    up_6l = _up(v, 6 * lam)
    Ht0 = 2 * up_6l * (H0 + 1)
    R_track = max(R8, lev(8 * lam / Ht0), 16 * delta)
    Ht = 2 * Ht0
    P.update({"M_prime": Mp, "t0": t0, "t1": t1, "t2": t2, "t3": t3, "t4": t4, "t5": t5,
              "t6": t6, "t7": t7, "t8": t8, "R8": R8, "H0": H0, "H_tilde0": Ht0,
              "v_up_1+8lam2": up_T, "v_up_3lam": up_3l, "v_up_6lam": up_6l})

    # no round trip
    up_2 = _up(v, 2.0)
    H3 = (4 * lam ** 2 * H + 2 * lam * _up(v, lam)) * up_2
    R_sqcap = max(3 * R_track,
                  3 * lam / (2 * Ht) * r(1.0 / (8 * lam * Ht)) + 96 * lam ** 2 * delta,
                  r(1.0 / (6 * up_2 * H3)))
    P.update({"H3": H3})

    # geodesic tracking
    k = max(2 * K_NO_ROUND_TRIP + 1, 8, 12 * lam * (2 * lam + 1))
    H2 = max(2 * _up(v, 3 * L * k) * (ht + up_3l * Ht), 2 * up_3l * H)
    H2t = (2 * Ht + ht) * (delta + up_3l) * _up(v, 3 * k)
    Rt1 = max(R_sqcap, 2 * (2 * lam + 1) * r(1.0 / (3 * lam)), r(1.0 / (2 * Ht)))
    Rt3 = max(Rt1, lev((12 + ht) * delta) / L)
    R_tilde = max(Rt3, r(1.0 / (2 * L * H2)))
    P.update({"k": k, "R_tilde1": Rt1, "R_tilde3": Rt3})

    # distance between O(u)-geodesics
    J_plus = 2 * H2t * up_2
    J_minus = 2 * H2 * _up(v, 4.0)
    J = max(J_plus, J_minus)
    R_final = max(r(1.0 / (2 * J_plus)), lev(max(284 * delta, 584 * delta / J_plus)))
    P.update({"J_plus": J_plus, "J_minus": J_minus})
    return TrackingConstants(t_circ, R_circ, up_3l, H, Ht, t_track, R_track, R_sqcap,
                             K_NO_ROUND_TRIP, H2, H2t, R_tilde, J, R_final, P)


def lemma310_sweep(w, lam, delta, L=None, exponents=range(0, 21)):
    """max over p = 2^j of R_tilde(w_p)/w(p) and R(w_p)/w(p), with w_p = advance(w, p)."""
    rows = []
    for j in exponents:
        p = 2.0 ** j
        tc = tracking_radii(lam, delta, sl.advance(w, p), L)
        wp = float(w(p))
        rows.append((p, tc.R_tilde / wp, tc.R_final / wp))
    return {"rows": rows, "K_tilde": max(r[1] for r in rows), "K": max(r[2] for r in rows)}


# -- reports -----------------------------------------------------------------

@dataclass
class VerifyReport:
    check: str
    params: dict
    n_trials: int
    bound: float
    max_observed: float
    violations: list = field(default_factory=list)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def margin(self):
        return self.bound - self.max_observed

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"check": self.check, "params": _jsonable(self.params), "n_trials": self.n_trials,
                "bound": self.bound, "max_observed": self.max_observed, "margin": self.margin,
                "violations": _jsonable(self.violations), "seed": self.seed,
                "extra": _jsonable(self.extra)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (Point, BoundaryPoint)):
        return {"model": x.model, "coords": _jsonable(x.coords)}
    if hasattr(x, "to_dict"):
        return x.to_dict()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


# -- O(u)-paths --------------------------------------------------------------

DEFAULT_T_MAX = {"HalfPlane": 24.0, "RegularTree": 512.0, "RayComb": 1.0e7}


@dataclass
class OuPath:
    """A sampled (lam, budget)-quasigeodesic segment, ray or line.

    `budget` is a number c (additive constant) or an admissible v, read at
    max(|t|, |t'|). The path is defined for every t in its domain through
    `evaluator`; `ts`/`points` are the stored samples.
    """
    space: object
    ts: np.ndarray
    points: list
    lam: float
    budget: object
    domain: str
    evaluator: object = None
    base: object = None
    seed: int = 0

    def __call__(self, t):
        return self.evaluator(t)

    @property
    def has_constant_budget(self):
        return not isinstance(self.budget, sl.AdmissibleFunction)

    def budget_at(self, t):
        if self.has_constant_budget:
            return np.full(np.shape(t), float(self.budget)) if np.ndim(t) else float(self.budget)
        return self.budget(np.abs(t))

    def embedding_excess(self):
        """Largest violation of the pairwise (lam, budget) inequalities over the samples (<= 0 passes)."""
        D = self.space.distance_matrix(self.points)
        t = np.asarray(self.ts, float)
        dt = np.abs(t[:, None] - t[None, :])
        b = self.budget_at(np.maximum(np.abs(t[:, None]), np.abs(t[None, :])))
        over = D - (self.lam * dt + b)
        under = (dt / self.lam - b) - D
        ex = np.maximum(over, under)
        np.fill_diagonal(ex, -np.inf)
        return float(ex.max()) if len(t) > 1 else -math.inf


class _Perturbation:
    """Reparametrization phi with slopes in [1/lam, lam], plus lateral and jitter profiles.

    Profiles interpolate node values; a node's value is bounded by the budget
    at the node next to it on the side of 0, so on every cell the profile
    stays under the budget at any of its points.
    """

    def __init__(self, rng, lam, nodes, lat_frac, jit_frac, budget, integer_lateral=False):
        self.nodes = nodes = np.asarray(nodes, float)
        n = len(nodes)
        z = int(np.argmin(np.abs(nodes)))
        slopes = np.exp(rng.uniform(-math.log(lam), math.log(lam), n - 1)) if lam > 1 else np.ones(n - 1)
        phi = np.zeros(n)
        steps = slopes * np.diff(nodes)
        phi[z + 1:] = np.cumsum(steps[z:])
        phi[:z] = -np.cumsum(steps[:z][::-1])[::-1]
        self.phi_nodes = phi - phi[z] + 0.0
        inner = np.array([nodes[min(max(i + (-1 if nodes[i] > 0 else 1), 0), n - 1)] if i != z else nodes[z]
                          for i in range(n)])
        inner = np.where(np.abs(inner) < np.abs(nodes), inner, nodes)
        bnd = np.asarray(budget(np.abs(inner)), float)
        self.lat_nodes = rng.uniform(-1.0, 1.0, n) * lat_frac * bnd
        self.jit_nodes = rng.uniform(-1.0, 1.0, n) * jit_frac * bnd
        if integer_lateral:
            self.lat_nodes = np.floor(np.abs(self.lat_nodes))
        self.seeds = rng.integers(0, 2 ** 31, n)

    def phi(self, t):
        return float(np.interp(t, self.nodes, self.phi_nodes))

    def phi_inv(self, s):
        return float(np.interp(s, self.phi_nodes, self.nodes))

    def lateral(self, t):
        return float(np.interp(t, self.nodes, self.lat_nodes))

    def jitter(self, t):
        return float(np.interp(t, self.nodes, self.jit_nodes))

    def cell(self, t):
        return int(np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, len(self.nodes) - 1))


def _path_nodes(domain, T):
    if domain == "segment":
        return np.linspace(0.0, T, int(math.ceil(T)) + 1)
    pos = list(np.arange(0.0, min(T, 64.0) + 1.0))
    while pos[-1] < T:
        pos.append(min(T, pos[-1] * 1.05))
    pos = np.array(pos)
    if domain == "ray":
        return pos
    return np.concatenate([-pos[:0:-1], pos])


def _sample_ts(domain, T, n):
    if domain == "segment":
        return np.linspace(0.0, T, n)
    k = n // 2
    lin = np.linspace(0.0, min(T, 32.0), k)
    geo = np.geomspace(min(T, 32.0), T, n - k + 1)[1:] if T > 32.0 else np.array([])
    pos = np.unique(np.concatenate([lin, geo]))
    if domain == "ray":
        return pos
    return np.concatenate([-pos[:0:-1], pos])


def _tree_branch(space, w, avoid, seed, length):
    """Non-backtracking walk of the given length from vertex w whose first step avoids `avoid`."""
    if length <= 0:
        return w
    rng = make_rng(seed)
    q = space.q
    prev = None
    cur = w
    for i in range(length):
        nbrs = ([cur[:-1]] if cur else []) + [cur + (c,) for c in range(q if not cur else q - 1)]
        bad = set(avoid) if i == 0 else {prev}
        opts = [x for x in nbrs if x not in bad]
        prev, cur = cur, opts[int(rng.integers(0, len(opts)))]
    return cur


def generate_quasigeodesic(space, endpoints, lam, budget, seed=0, n_samples=None, t_max=None):
    """Random (lam, budget)-quasigeodesic shadowing the geodesic between `endpoints`.

    Lateral offsets stay within budget/4 and parameter jitter within
    budget/(4 lam), which keeps every pair inside the embedding inequalities.
    On trees the path runs through vertices, the jitter is the rounding to
    integer positions and side branches have length at most (budget - 1)/2.
    """
    if lam < 1:
        raise ValueError("need lam >= 1")
    a, b = endpoints
    if a == b:
        raise ValueError("endpoints must be distinct")
    const = not isinstance(budget, sl.AdmissibleFunction)
    if const and budget < 0:
        raise ValueError("budget must be >= 0")
    B = (lambda r: np.full(np.shape(r), float(budget))) if const else budget
    gamma = space.geodesic_between(a, b)
    if isinstance(a, Point) and isinstance(b, Point):
        domain = "segment"
    elif isinstance(a, Point):
        domain = "ray"
    else:
        domain = "line"
    rng = make_rng(seed)
    tree = isinstance(space, (RegularTree, RayComb))
    if tree and const and 0 < budget < 1:
        raise ValueError("tree paths need budget 0 or >= 1")
    if domain == "segment":
        T_guess = lam * gamma.length + 2.0
    else:
        T_guess = float(t_max if t_max is not None else DEFAULT_T_MAX.get(type(space).__name__, 24.0))
    nodes = _path_nodes(domain, T_guess)
    if tree:
        pert = _Perturbation(rng, lam, nodes, 0.5, 0.0, lambda r: np.maximum(B(r) - 1.0, 0.0),
                             integer_lateral=True)
    else:
        pert = _Perturbation(rng, lam, nodes, 0.25, 0.25 / lam, B)
    if domain == "segment":
        T = pert.phi_inv(gamma.length)
    else:
        T = T_guess
    if isinstance(space, HalfPlane):
        line, origin, sign = gamma.frame

        def ev(t):
            s = pert.phi(t) + pert.jitter(t)
            if domain == "segment":
                s = min(max(s, 0.0), gamma.length) if pert.lateral(t) == 0 and pert.jitter(t) == 0 else s
            return Point(space.tag, space.fermi_point(line, origin + sign * s, pert.lateral(t)))
    elif isinstance(space, RayComb):
        if not (domain == "ray" and a == space.basepoint):
            raise NotImplementedError("comb paths are rays from the basepoint")

        def ev(t):
            S = max(0, int(round(pert.phi(t))))
            e = int(pert.lateral(t))
            if e == 0:
                return Point(space.tag, (S,))
            r = make_rng(int(pert.seeds[pert.cell(t)]))
            letters = list(space.branch_letters(S))
            br = (letters[int(r.integers(0, len(letters)))],) + tuple(int(c) for c in r.integers(0, space.q - 1, e - 1))
            return Point(space.tag, (S,) + br)
    elif isinstance(space, RegularTree):
        lo_s, hi_s = gamma.s_min, gamma.s_max

        def ev(t):
            S = int(round(pert.phi(t)))
            S = int(min(max(S, lo_s), hi_s))
            w = gamma.point(S).coords
            e = int(pert.lateral(t))
            if e == 0:
                return Point(space.tag, w)
            avoid = [gamma.point(x).coords for x in (S - 1, S + 1) if lo_s <= x <= hi_s]
            return Point(space.tag, _tree_branch(space, w, avoid, int(pert.seeds[pert.cell(t)]), e))
    else:
        raise NotImplementedError(f"quasigeodesics are not generated on {type(space).__name__}")
    n = n_samples or (max(33, int(4 * T) + 1) if domain == "segment" else 200)
    if domain == "segment":
        n = min(n, 400)
    ts = _sample_ts(domain, T, n)
    pts = [ev(float(t)) for t in ts]
    path = OuPath(space, ts, pts, float(lam), budget, domain, ev, gamma, seed)
    path.perturbation = pert
    ex = path.embedding_excess()
    scale = 1.0 + float(np.max(np.abs(ts)))
    if ex > 1e-6 * scale:
        raise BudgetViolated(f"generated path breaks its own inequalities by {ex:.3g}")
    return path


# -- distances between samples ------------------------------------------------

def _cross(space, A, B, dist=None):
    if dist is not None:
        return np.array([[dist(x, y) for y in B] for x in A])
    if isinstance(space, HalfPlane):
        P = np.array([p.coords for p in A], float).reshape(-1, 2)
        Q = np.array([p.coords for p in B], float).reshape(-1, 2)
        return space.dist_xt(P[:, None, 0], P[:, None, 1], Q[None, :, 0], Q[None, :, 1])
    return np.array([[space._distance(x, y) for y in B] for x in A])


def _refine_min(space, target, path, t_lo, t_hi, dist=None, rounds=40, width=None):
    """min over t in [t_lo, t_hi] of d(target, path(t)) by repeated grid shrinking."""
    d = dist or space._distance
    width = width or 1e-3
    best = math.inf
    for _ in range(rounds):
        grid = np.linspace(t_lo, t_hi, 17)
        vals = [d(target, path(float(t))) for t in grid]
        i = int(np.argmin(vals))
        best = min(best, vals[i])
        step = grid[1] - grid[0]
        t_lo, t_hi = max(t_lo, grid[i] - step), min(t_hi, grid[i] + step)
        if t_hi - t_lo < width:
            break
    return best


def _dist_to_path(space, targets, path, dist=None, refine=None):
    """d(target, im path) for each target: nearest sample, then refinement around it."""
    M = _cross(space, targets, path.points, dist)
    out = M.min(axis=1)
    idx = M.argmin(axis=1)
    order = np.argsort(-out)
    k = len(order) if refine is None else min(refine, len(order))
    ts = path.ts
    for j in order[:k]:
        i = idx[j]
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
        out[j] = min(out[j], _refine_min(space, targets[j], path, float(lo), float(hi), dist,
                                         width=0.25 / path.lam))
    return out


def _dist_to_geodesic(space, pts, gamma, dist=None):
    d = dist or space._distance
    return np.array([d(p, space.project_to_geodesic(gamma, p)[0]) for p in pts])


# -- Morse lemma ---------------------------------------------------------------

def verify_morse(space, path, delta, dist=None):
    """Deviations of a (lam, c)-quasigeodesic segment from the geodesic between its ends.

    `dist` overrides the distance used for measuring (negative control).
    """
    if path.domain != "segment" or not path.has_constant_budget:
        raise ValueError("verify_morse takes a segment with a constant budget")
    lam, c = path.lam, float(path.budget)
    h, ht, bound, anti_bound = morse_bounds(lam, delta, c)
    a, b = path.points[0], path.points[-1]
    if a == b:
        dev, anti = 0.0, 0.0
    else:
        gamma = space.geodesic_between(a, b)
        dev = float(_dist_to_geodesic(space, path.points, gamma, dist).max())
        n_geo = int(math.ceil(2 * gamma.length)) + 1
        geo = [gamma.point(s) for s in np.linspace(0.0, gamma.length, n_geo)]
        anti = float(_dist_to_path(space, geo, path, dist, refine=5).max())
    viol = []
    if dev > bound + VERIFY_ATOL:
        viol.append({"kind": "morse", "observed": dev, "bound": bound, "seed": path.seed})
    if anti > anti_bound + VERIFY_ATOL:
        viol.append({"kind": "anti_morse", "observed": anti, "bound": anti_bound, "seed": path.seed})
    return VerifyReport("morse", {"lam": lam, "c": c, "delta": delta}, 1, bound, dev, viol, path.seed,
                        {"anti_bound": anti_bound, "anti_observed": anti, "h": h, "h_tilde": ht})


def morse_sweep(space, lam, c, delta, n_trials=1000, seed=0, radius=8.0, corrupt=False):
    """verify_morse over random segments; merged by max and concatenation."""
    from .hyperbolicity import CorruptedDistance
    h, ht, bound, anti_bound = morse_bounds(lam, delta, c)
    dist = None
    if corrupt:
        dist = CorruptedDistance(space, relative=0.5, additive=2.0 * anti_bound, seed=seed)
    rng = make_rng(seed)
    worst, worst_anti, viol = 0.0, 0.0, []
    for i in range(n_trials):
        a, b = space.sample_points({"radius": radius, "law": "uniform", "include_basepoint": False}, 2, rng)
        if a == b:
            continue
        s = int(rng.integers(0, 2 ** 31))
        path = generate_quasigeodesic(space, (a, b), lam, c, seed=s)
        rep = verify_morse(space, path, delta, dist)
        worst = max(worst, rep.max_observed)
        worst_anti = max(worst_anti, rep.extra["anti_observed"])
        for v in rep.violations:
            v["trial"] = i
            viol.append(v)
    return VerifyReport("morse", {"lam": lam, "c": c, "delta": delta, "model": space.tag,
                                  "radius": radius, "corrupted": corrupt},
                        n_trials, bound, worst, viol, seed,
                        {"anti_bound": anti_bound, "anti_observed": worst_anti})


# -- boundary charts ----------------------------------------------------------

def boundary_chart(space, p):
    """Coordinates of a point or ideal point in a chart of the compactified model."""
    if isinstance(space, HalfPlane):
        # raw z, None standing for the ideal point at infinity
        if isinstance(p, BoundaryPoint):
            return None if p.is_infinite else complex(p.coords[0], 0.0)
        return complex(*p.coords)
    if isinstance(space, RegularTree):
        return p.coords if isinstance(p, Point) else space.word_prefix(p, 64)
    if isinstance(space, RayComb):
        return p.coords[0] if isinstance(p, Point) else math.inf
    if isinstance(space, HeintzeLog):
        # N-coordinates and a height squashed into [0, 1]; omega is height 1
        if isinstance(p, BoundaryPoint):
            return (0.0,) * space.spec.dim + (1.0,) if p.is_infinite else tuple(p.coords) + (0.0,)
        s = p.coords[-1]
        return tuple(p.coords[:-1]) + (0.5 * (1.0 + math.tanh(0.5 * s)),)
    if isinstance(space, HyperboloidN):
        x = np.asarray(p.coords, float)
        if isinstance(p, Point):
            x = x[1:] / np.linalg.norm(x[1:]) if np.linalg.norm(x[1:]) > 0 else x[1:]
        return tuple(float(c) for c in x)
    raise NotImplementedError(type(space).__name__)


def _hp_ideal_toward(space, z):
    """Endpoint, beyond z, of the half-plane geodesic from i through z."""
    if z is None:
        return space.ideal(math.inf)
    x, y = z.real, z.imag
    if y == 0:
        return space.ideal(x)
    if x == 0:
        return space.ideal(math.inf) if y > 1 else space.ideal(0.0)
    # the circle through i and z is centred at c on the real axis; its
    # endpoints e and -1/e, with the right one computed without cancellation
    c = (x * x + y * y - 1.0) / (2.0 * x)
    rho = math.hypot(1.0, c)
    e = c + rho if c >= 0 else 1.0 / (rho - c)
    end = e if x > 0 else -1.0 / e
    return space.ideal(math.inf) if not math.isfinite(end) else space.ideal(end)


def chart_distance(space, c1, c2):
    if isinstance(space, HalfPlane):
        # chordal distance of the Cayley images, without forming them
        if c1 is None and c2 is None:
            return 0.0
        if c1 is None or c2 is None:
            return 2.0 / abs((c2 if c1 is None else c1) + 1j)
        return 2.0 * abs(c1 - c2) / (abs(c1 + 1j) * abs(c2 + 1j))
    if isinstance(space, RegularTree):
        k = 0
        while k < min(len(c1), len(c2)) and c1[k] == c2[k]:
            k += 1
        return math.exp(-k)
    if isinstance(space, RayComb):
        return abs(math.exp(-min(c1, 700)) - math.exp(-min(c2, 700)))
    if isinstance(space, HeintzeLog):
        n1, n2 = np.array(c1[:-1]), np.array(c2[:-1])
        h1, h2 = c1[-1], c2[-1]
        return abs(h1 - h2) + (1.0 - max(h1, h2)) * float(space.spec.quasimetric(n1, n2))
    if isinstance(space, HyperboloidN):
        return float(np.linalg.norm(np.subtract(c1, c2)))
    raise NotImplementedError(type(space).__name__)


def _periodic_end(space, word):
    """Eventually periodic ray agreeing with `word`: the shortest period of its second half."""
    n = len(word)
    half = n // 2
    for p in range(1, max(1, half // 3) + 1):
        tail = word[half:]
        if all(tail[i] == tail[i + p] for i in range(len(tail) - p)):
            start = half
            while start > 0 and word[start - 1] == word[start - 1 + p]:
                start -= 1
            if start == 0:
                start = 1
            per = word[start:start + p]
            return space.end(word[:start], per)
    raise NonConvergence("no eventual period in the limiting word")


def boundary_map(cmap, xi, tol=1e-5, max_doublings=40):
    """Image of xi under the boundary extension of cmap, read through boundary charts."""
    X, Y = cmap.source, cmap.target
    ray = X.ray(xi)
    limit = DEFAULT_T_MAX.get(type(X).__name__, math.inf) if isinstance(X, HalfPlane) else math.inf
    prev = None
    t = 1.0
    for _ in range(max_doublings):
        img = cmap(ray.point(min(t, ray.s_max)))
        c = boundary_chart(Y, img)
        if prev is not None and chart_distance(Y, prev, c) < tol:
            if isinstance(Y, HalfPlane):
                return _hp_ideal_toward(Y, c)
            if isinstance(Y, RegularTree):
                k = 0
                while k < min(len(prev), len(c)) and prev[k] == c[k]:
                    k += 1
                # period detection wants a long settled prefix
                if k >= 96:
                    return _periodic_end(Y, c[:k])
                prev = c
                t *= 2.0
                continue
            if isinstance(Y, HeintzeLog):
                return Y.ideal() if c[-1] > 0.5 else Y.ideal(c[:-1])
            if isinstance(Y, HyperboloidN):
                return Y.ideal(np.array(c))
            if isinstance(Y, RayComb):
                return Y.omega
        prev = c
        if t >= limit:
            break
        t *= 2.0
    raise NonConvergence("boundary chart coordinates did not settle")


# -- sublinear tracking ----------------------------------------------------------

def limit_point(space, path, tol=1e-8):
    """Boundary point of an O(u)-ray, after checking that its Gromov sequence is Cauchy."""
    o = space.basepoint
    T = float(path.ts[-1])
    ts = [T / 2.0 ** k for k in range(12, -1, -1) if T / 2.0 ** k >= 1.0]
    pts = [path(t) for t in ts]
    gp = [0.5 * (space._distance(o, x) + space._distance(o, y) - space._distance(x, y))
          for x, y in zip(pts, pts[1:])]
    # the Gromov products must grow linearly (they are >= t / lam - O(v(t)))
    if len(gp) < 2 or gp[-1] < 0.25 * ts[-2] / path.lam:
        raise NonConvergence("Gromov products along the ray do not diverge")
    if isinstance(space, RayComb):
        return space.omega
    if isinstance(space, HalfPlane):
        c1, c2 = boundary_chart(space, pts[-2]), boundary_chart(space, pts[-1])
        if chart_distance(space, c1, c2) > max(tol, 10.0 * math.exp(-0.5 * gp[-1])):
            raise NonConvergence("chart coordinates along the ray did not settle")
        return _hp_ideal_toward(space, c2)
    if isinstance(space, RegularTree):
        k = RegularTree._meet_len(pts[-2], pts[-1])
        return _periodic_end(space, pts[-1].coords[:k])
    raise NotImplementedError(type(space).__name__)


def verify_ray_tracking(space, path, delta, v=None, constants=None, L=None):
    """Lemma-3.4 style check: d(path(t), ray) <= H v(t) for t >= t_track, and the converse for s >= R_track.

    Also reports the same ratios over every sampled t, which is a stronger
    check when the model cannot reach the literal thresholds.
    """
    if path.domain != "ray":
        raise ValueError("verify_ray_tracking takes a ray")
    v = path.budget if v is None else v
    if not isinstance(v, sl.AdmissibleFunction):
        raise ValueError("ray tracking needs an admissible v")
    tc = constants or tracking_radii(path.lam, delta, v, L)
    xi = limit_point(space, path)
    ray = space.ray(xi)
    ts = np.asarray(path.ts, float)
    dev = _dist_to_geodesic(space, path.points, ray)
    r1 = dev / v(ts)
    # converse direction on a geometric grid of ray parameters inside the sampled range
    s_end = space.project_to_geodesic(ray, path.points[-1])[1]
    ss = np.unique(np.concatenate([np.linspace(0.0, min(32.0, 0.9 * s_end), 17),
                                   np.geomspace(1.0, max(1.0, 0.9 * s_end), 32)]))
    ss = ss[ss <= 0.9 * s_end]
    geo = [ray.point(float(s)) for s in ss]
    anti = _dist_to_path(space, geo, path)
    r2 = anti / v(ss)
    beyond_t = ts >= tc.t_track
    beyond_s = ss >= tc.R_track
    m1 = float(r1[beyond_t].max()) if beyond_t.any() else 0.0
    m2 = float(r2[beyond_s].max()) if beyond_s.any() else 0.0
    viol = []
    for t, r in zip(ts[beyond_t], r1[beyond_t]):
        if r > tc.H:
            viol.append({"kind": "ray", "t": float(t), "ratio": float(r), "bound": tc.H})
    for s, r in zip(ss[beyond_s], r2[beyond_s]):
        if r > tc.H_tilde:
            viol.append({"kind": "anti_ray", "s": float(s), "ratio": float(r), "bound": tc.H_tilde})
    extra = {"H_tilde": tc.H_tilde, "anti_max_beyond": m2, "t_track": tc.t_track, "R_track": tc.R_track,
             "n_beyond_t": int(beyond_t.sum()), "n_beyond_s": int(beyond_s.sum()),
             "max_ratio_all_t": float(r1.max()), "anti_max_all_s": float(r2.max()) if len(r2) else 0.0,
             "limit": xi}
    return VerifyReport("ray_tracking", {"lam": path.lam, "delta": delta, "v": v, "model": space.tag},
                        1, tc.H, m1, viol, path.seed, extra)


def ray_tracking_sweep(space, lam, v, delta, n_rays=100, seed=0, t_max=None, L=None):
    tc = tracking_radii(lam, delta, v, L)
    rng = make_rng(seed)
    reps = []
    for i in range(n_rays):
        if isinstance(space, RayComb):
            xi = space.omega
        elif isinstance(space, HalfPlane):
            xi = space.sample_ideal(rng)
        else:
            xi = space.end((int(rng.integers(0, space.q)),), (int(rng.integers(0, space.q - 1)),))
        path = generate_quasigeodesic(space, (space.basepoint, xi), lam, v,
                                      seed=int(rng.integers(0, 2 ** 31)), t_max=t_max)
        reps.append(verify_ray_tracking(space, path, delta, v, tc))
    viol = [dict(w, trial=i) for i, r in enumerate(reps) for w in r.violations]
    extra = {"H_tilde": tc.H_tilde, "t_track": tc.t_track, "R_track": tc.R_track,
             "anti_max_beyond": max(r.extra["anti_max_beyond"] for r in reps),
             "n_beyond_t": sum(r.extra["n_beyond_t"] for r in reps),
             "n_beyond_s": sum(r.extra["n_beyond_s"] for r in reps),
             "max_ratio_all_t": max(r.extra["max_ratio_all_t"] for r in reps),
             "anti_max_all_s": max(r.extra["anti_max_all_s"] for r in reps)}
    return VerifyReport("ray_tracking", {"lam": lam, "delta": delta, "v": v, "model": space.tag},
                        n_rays, tc.H, max(r.max_observed for r in reps), viol, seed, extra)


# -- distance between O(u)-geodesics ------------------------------------------------

def _box(space, ends):
    gps = [boundary_gromov(space, a, b) for i, a in enumerate(ends) for b in ends[i + 1:]]
    return min(gps), max(gps)


def boundary_gromov(space, a, b):
    if hasattr(space, "boundary_gromov_product"):
        return space.boundary_gromov_product(a, b)
    from .boundary import boundary_gromov_product
    return boundary_gromov_product(space, a, b)


def _path_distance(space, p1, p2):
    """inf over t1, t2 of d(p1(t1), p2(t2)): sample minimum, then alternating refinement."""
    M = _cross(space, p1.points, p2.points)
    i, j = np.unravel_index(int(np.argmin(M)), M.shape)
    best = float(M[i, j])
    t1, t2 = float(p1.ts[i]), float(p2.ts[j])
    w1 = (p1.ts[max(i - 1, 0)], p1.ts[min(i + 1, len(p1.ts) - 1)])
    w2 = (p2.ts[max(j - 1, 0)], p2.ts[min(j + 1, len(p2.ts) - 1)])
    for _ in range(6):
        q2 = p2(t2)
        grid = np.linspace(w1[0], w1[1], 33)
        vals = [space._distance(p1(float(t)), q2) for t in grid]
        t1 = float(grid[int(np.argmin(vals))])
        q1 = p1(t1)
        grid = np.linspace(w2[0], w2[1], 33)
        vals2 = [space._distance(q1, p2(float(t))) for t in grid]
        t2 = float(grid[int(np.argmin(vals2))])
        new = min(min(vals), min(vals2))
        if best - new < 1e-3:
            best = min(best, new)
            break
        best = new
    return best


def verify_distance_transfer(space, p1, p2, delta, v=None, L=None, R=None, R_tilde=None, constants=None):
    """Compare d(gamma1, gamma2) with d(path1, path2) against J v(box-max of the four ends).

    R and R_tilde override the literal thresholds of hypotheses (iv) and (v);
    the report records whether the literal values were met.
    """
    v = p1.budget if v is None else v
    lam = max(p1.lam, p2.lam)
    tc = constants or tracking_radii(lam, delta, v, L)
    L = 9.0 * lam ** 2 if L is None else float(L)
    R_used = tc.R_final if R is None else float(R)
    Rt_used = tc.R_tilde if R_tilde is None else float(R_tilde)
    o = space.basepoint
    # (i) four distinct ideal endpoints
    ends = []
    for p in (p1, p2):
        if p.domain != "line" or p.base is None:
            raise HypothesisUnsatisfied("i", "paths must be O(u)-lines with known base geodesics")
        ends += [p.base.start, p.base.end]
    if len(set(ends)) < 4:
        raise HypothesisUnsatisfied("i", "endpoints are not distinct")
    # (ii) the paths satisfy their embedding inequalities
    for p in (p1, p2):
        if p.embedding_excess() > 1e-6 * (1 + float(np.max(np.abs(p.ts)))):
            raise HypothesisUnsatisfied("ii", "a path breaks its (lam, v) inequalities")
    # (iii) each path ends where its geodesic does: far samples stay near gamma and project to its ends
    for p in (p1, p2):
        for t in (float(p.ts[0]), float(p.ts[-1])):
            q = p(t)
            proj, s = space.project_to_geodesic(p.base, q)
            if space._distance(q, proj) > float(p.budget_at(t)) or s * t <= 0 or abs(s) < abs(t) / (2 * p.lam):
                raise HypothesisUnsatisfied("iii", f"path does not run to the ends of its geodesic at t={t}")
    # (iv) Gromov-product floor and box-max threshold
    lo, hi = _box(space, ends)
    floor = 60.0 * delta
    if not (lo > 0 if delta == 0 else lo >= floor):
        raise HypothesisUnsatisfied("iv", f"min Gromov product {lo:.4g} below {floor:.4g}")
    if hi < R_used:
        raise HypothesisUnsatisfied("iv", f"max Gromov product {hi:.4g} below R = {R_used:.4g}")
    # (v) basepoint proximality
    prox = []
    for p in (p1, p2):
        r0 = space._distance(o, p(0.0))
        d_all = _dist_to_path(space, [o], p)[0]
        prox.append((r0, d_all))
        if not (Rt_used <= r0 <= L * d_all + 1e-9):
            raise HypothesisUnsatisfied("v", f"|path(0)| = {r0:.4g} not in [{Rt_used:.4g}, L inf = {L * d_all:.4g}]")
    if isinstance(space, HalfPlane):
        d_geo = space.line_distance(p1.base, p2.base)
    else:
        d_geo = _path_distance(space, _geodesic_samples(space, p1.base), _geodesic_samples(space, p2.base))
    d_path = _path_distance(space, p1, p2)
    diff = abs(d_geo - d_path)
    bound = tc.J * float(v(hi))
    viol = [] if diff <= bound else [{"diff": diff, "bound": bound, "seeds": [p1.seed, p2.seed]}]
    extra = {"d_geodesics": d_geo, "d_paths": d_path, "box_min": lo, "box_max": hi,
             "R_used": R_used, "R_literal": tc.R_final, "literal_R_met": hi >= tc.R_final,
             "R_tilde_used": Rt_used, "R_tilde_literal": tc.R_tilde,
             "literal_R_tilde_met": all(r0 >= tc.R_tilde for r0, _ in prox), "J": tc.J}
    return VerifyReport("distance_transfer", {"lam": lam, "delta": delta, "v": v, "L": L, "model": space.tag},
                        1, bound, diff, viol, p1.seed, extra)


def _geodesic_samples(space, gamma, T=24.0, n=97):
    ts = np.linspace(-T, T, n)
    return OuPath(space, ts, [gamma.point(float(t)) for t in ts], 1.0, 0.0, "line", gamma.point, gamma)


def far_line_pair(space, depth, rng):
    """Two disjoint half-plane geodesics with all four endpoints near infinity at scale e^depth.

    The four endpoints are e^depth times distinct numbers in [1, 6], so every
    pairwise Gromov product is depth + O(1).
    """
    if not isinstance(space, HalfPlane):
        raise NotImplementedError("far line pairs are built on the half-plane")
    while True:
        e = np.sort(rng.uniform(1.0, 6.0, 4))
        if np.min(np.diff(e)) > 0.3:
            break
    S = math.exp(depth)
    # nested or side by side; both keep the lines disjoint
    if rng.random() < 0.5:
        pairs = ((e[0], e[1]), (e[2], e[3]))
    else:
        pairs = ((e[0], e[3]), (e[1], e[2]))
    return [space.geodesic_between(space.ideal(S * a), space.ideal(S * b)) for a, b in pairs]


def distance_transfer_sweep(space, lam, v, delta, n_pairs=20, depth=45.0, seed=0, R=None, R_tilde=None,
                            L=None):
    tc = tracking_radii(lam, delta, v, L)
    rng = make_rng(seed)
    reps = []
    for _ in range(n_pairs):
        g1, g2 = far_line_pair(space, depth, rng)
        paths = [generate_quasigeodesic(space, (g.start, g.end), lam, v, seed=int(rng.integers(0, 2 ** 31)))
                 for g in (g1, g2)]
        reps.append(verify_distance_transfer(space, paths[0], paths[1], delta, v, L, R, R_tilde, tc))
    viol = [w for r in reps for w in r.violations]
    return VerifyReport("distance_transfer", {"lam": lam, "delta": delta, "v": v, "depth": depth,
                                              "model": space.tag},
                        n_pairs, min(r.bound for r in reps), max(r.max_observed for r in reps), viol, seed,
                        {"R_used": reps[0].extra["R_used"], "R_literal": tc.R_final,
                         "literal_R_met": all(r.extra["literal_R_met"] for r in reps),
                         "max_diff": max(r.max_observed for r in reps)})
