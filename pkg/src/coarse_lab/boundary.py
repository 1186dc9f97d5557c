"""Visual kernels on Gromov boundaries, the chain construction and metric cross-ratios."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.csgraph import csgraph_from_dense, shortest_path

from .spaces import (BoundaryPoint, Configuration, DegenerateEndpoints, HalfPlane,
                     HyperboloidN, NonConvergence, Point, make_rng)

FW_LIMIT = 2048
CAUCHY_TOL = 1e-4
MAX_DOUBLINGS = 40


class InvalidParameter(ValueError):
    pass


class DegenerateQuadruple(ValueError):
    pass


def default_mu(delta):
    """mu = 2**(1/delta) for delta > 0 and e for delta = 0."""
    if delta < 0:
        raise InvalidParameter("delta must be >= 0")
    return math.e if delta == 0 else 2.0 ** (1.0 / delta)


@dataclass
class VisualKernel:
    space: object
    delta: float
    mu: float | None = None
    basepoint: Point | None = None

    def __post_init__(self):
        if self.mu is None:
            self.mu = default_mu(self.delta)
        if not self.mu > 1:
            raise InvalidParameter("mu must exceed 1")
        if self.delta > 0 and self.mu ** self.delta > 2.0 * (1 + 1e-12):
            raise InvalidParameter(f"mu^delta = {self.mu ** self.delta:.6g} exceeds 2")
        if self.basepoint is None:
            self.basepoint = self.space.basepoint

    def __call__(self, x, y):
        """rho_mu(x, y) = mu^-(x|y)_o, 0 on the diagonal."""
        if x == y:
            return 0.0
        if isinstance(x, BoundaryPoint) or isinstance(y, BoundaryPoint):
            gp = boundary_gromov_product(self.space, x, y, self.basepoint)
        else:
            d = self.space.distance
            o = self.basepoint
            gp = 0.5 * (d(x, o) + d(y, o) - d(x, y))
        return self.mu ** (-gp)


def quasi_ultrametric_constant(values):
    """max over triples of v[i,k] / max(v[i,j], v[j,k]); 1 for fewer than 3 points."""
    V = np.asarray(values, float)
    n = V.shape[0]
    K = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        if n <= 128:
            # axes (i, j, k): v[i,k] / max(v[i,j], v[j,k])
            r = np.where(V[:, None, :] > 0, V[:, None, :] / np.maximum(V[:, :, None], V[None, :, :]), 0.0)
            r[~np.isfinite(r)] = 0.0
            return max(K, float(r.max())) if n else K
        for j in range(n):
            den = np.maximum(V[:, j:j + 1], V[j:j + 1, :])
            r = np.where(V > 0, V / den, 0.0)
            r[~np.isfinite(r)] = 0.0
            K = max(K, float(r.max()))
    return K


@dataclass
class KernelMatrix:
    values: np.ndarray
    quasi_ultrametric_K: float
    mu: float = math.e

    @classmethod
    def from_values(cls, values, mu=math.e):
        V = np.asarray(values, float)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError("kernel must be a square matrix")
        if np.any(V < 0) or np.any(np.diag(V) != 0) or not np.array_equal(V, V.T):
            raise ValueError("kernel must be symmetric, non-negative, zero on the diagonal")
        return cls(V, quasi_ultrametric_constant(V), mu)

    @property
    def n(self):
        return self.values.shape[0]

    def to_json(self):
        # same layout as Configuration: strict lower triangle, row major
        il = np.tril_indices(self.n, -1)
        return json.dumps({"model": "kernel", "points": [None] * self.n, "basepoint": 0,
                           "dist": [float(x) for x in self.values[il]], "seed": None,
                           "mu": self.mu}, sort_keys=True)

    @classmethod
    def from_json(cls, s):
        d = json.loads(s)
        cfg = Configuration.from_json(s)
        return cls.from_values(cfg.dist, d.get("mu", math.e))


def visual_kernel_matrix(kernel: VisualKernel, config: Configuration) -> KernelMatrix:
    sp = kernel.space
    n = config.n
    if all(p is not None for p in config.points):
        for p in config.points:
            if p.model != sp.tag:
                raise DegenerateEndpoints(f"{p.model} point in a {sp.tag} configuration")
        do = np.array([sp.distance(p, kernel.basepoint) for p in config.points])
    else:
        do = config.dist[config.basepoint_index].copy()
    G = 0.5 * (do[:, None] + do[None, :] - config.dist)
    V = kernel.mu ** (-G)
    np.fill_diagonal(V, 0.0)
    V = 0.5 * (V + V.T)
    return KernelMatrix(V, quasi_ultrametric_constant(V), kernel.mu)


def random_kernel(n, rng, word_len=48):
    """Random kernel with K <= sqrt 2: an ultrametric times entrywise factors in [1, sqrt 2].

    The ultrametric is w[len of common prefix] for random binary words and a
    random decreasing weight sequence w.
    """
    if not 1 <= word_len <= 52:
        raise ValueError("word_len must be in 1..52")
    words = rng.integers(0, 2, size=(n, word_len))
    w = np.cumprod(rng.uniform(0.3, 0.95, size=word_len + 1))
    # common prefix length from the top set bit of the xor of the packed words
    packed = words @ (2 ** np.arange(word_len - 1, -1, -1, dtype=np.int64))
    x = (packed[:, None] ^ packed[None, :]).astype(float)
    pref = np.where(x > 0, word_len - np.frexp(x)[1], word_len)
    U = w[pref]
    F = rng.uniform(1.0, math.sqrt(2.0), size=(n, n))
    V = U * np.triu(F, 1)
    V = V + V.T
    np.fill_diagonal(V, 0.0)
    return KernelMatrix.from_values(V)


def chain_metric(km):
    """Shortest-chain closure: inf over chains x = z0, ..., zm = y of sum rho(z_i, z_i+1)."""
    V = km.values if isinstance(km, KernelMatrix) else np.asarray(km, float)
    n = V.shape[0]
    if n == 0:
        return V.copy()
    # zero off-diagonal entries are real edges, so mark non-edges with inf instead
    W = V.copy()
    np.fill_diagonal(W, np.inf)
    G = csgraph_from_dense(W, null_value=np.inf)
    method = "FW" if n <= FW_LIMIT else "D"
    out, pred = shortest_path(G, method=method, directed=False, return_predecessors=True)
    out = _left_fold(V, out, pred)
    np.fill_diagonal(out, 0.0)
    return np.minimum(out, V)


def _left_fold(V, out, pred):
    """Re-sum every optimal chain edge by edge from its lower-index end.

    FW and Dijkstra associate the additions differently, so the raw lengths can
    differ in the last ulp; the fold makes the value depend only on the chain.
    """
    n = V.shape[0]
    reach = pred >= 0
    P = np.where(reach, pred, np.arange(n)[:, None])
    flat = (P + np.arange(n)[:, None] * n).ravel()
    E = V[P, np.arange(n)[None, :]].ravel()
    D = np.where(reach, np.nan, out).ravel()
    D[:: n + 1] = 0.0
    todo = np.flatnonzero(np.isnan(D))
    while todo.size:
        prev = D[flat[todo]]
        ready = ~np.isnan(prev)
        if not ready.any():
            break
        D[todo[ready]] = prev[ready] + E[todo[ready]]
        todo = todo[~ready]
    D = D.reshape(n, n)
    iu = np.triu_indices(n, 1)
    S = np.zeros_like(D)
    S[iu] = D[iu]
    return S + S.T


def frink_sandwich_holds(km, chain=None, tol=1e-12):
    """chain <= rho <= 4 chain entrywise."""
    V = km.values if isinstance(km, KernelMatrix) else np.asarray(km, float)
    C = chain_metric(V) if chain is None else chain
    return bool(np.all(C <= V + tol) and np.all(V <= 4.0 * C + tol * (1 + V)))


# -- boundary Gromov products ----------------------------------------------

def _closed_form_product(space, xi, eta):
    if isinstance(space, HalfPlane):
        return space.boundary_gromov_product(xi, eta)
    if isinstance(space, HyperboloidN):
        u, v = np.asarray(xi.coords, float), np.asarray(eta.coords, float)
        chord = float(np.linalg.norm(u / np.linalg.norm(u) - v / np.linalg.norm(v)))
        if chord == 0:
            return math.inf
        return -math.log(min(chord / 2.0, 1.0))
    return None


def boundary_gromov_product(space, xi, eta, o=None, method="auto", tol=CAUCHY_TOL):
    """(xi|eta)_o for ideal points (a finite point is also accepted on either side).

    method "closed" uses the visual-angle formula -log sin(theta/2) (half-plane
    and hyperboloid, basepoint only), "limit" doubles t along the two rays until
    (gamma_xi(t)|gamma_eta(t))_o moves by less than tol, "auto" prefers closed.
    """
    if xi == eta:
        raise DegenerateEndpoints("boundary Gromov product needs distinct points")
    o = space.basepoint if o is None else o
    both_ideal = isinstance(xi, BoundaryPoint) and isinstance(eta, BoundaryPoint)
    if method in ("auto", "closed") and both_ideal and o == space.basepoint:
        val = _closed_form_product(space, xi, eta)
        if val is not None:
            return val
        if method == "closed":
            raise InvalidParameter(f"no closed form for {type(space).__name__}")

    def ray_at(p, t):
        if isinstance(p, Point):
            return p
        g = space.geodesic_between(o, p)
        return g.point(t)

    d = space.distance
    do = lambda p: d(p, o)
    t = 1.0
    prev = None
    for _ in range(MAX_DOUBLINGS):
        a, b = ray_at(xi, t), ray_at(eta, t)
        val = 0.5 * (do(a) + do(b) - d(a, b))
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
        t *= 2.0
    raise NonConvergence("boundary Gromov product: Cauchy criterion failed")


# -- cross-ratios ----------------------------------------------------------

@dataclass
class CrossRatioResult:
    ratio: float
    log_plus: float
    boxtimes_sup: float
    boxtimes_inf: float

    def to_dict(self):
        return dict(self.__dict__)


def cross_ratio(metric_or_kernel, quad, mu=None, products=None):
    """[x1 x2 x3 x4] = r13 r24 / (r14 r23), with log_plus = max(0, log_mu ratio).

    `metric_or_kernel` is a KernelMatrix or square array (then `quad` holds
    indices) or a callable r(a, b) (then `quad` holds points). The Gromov
    product extremes default to -log_mu r over the six pairs; pass `products`
    (a callable or a matrix) to use exact values instead.
    """
    if len(quad) != 4:
        raise ValueError("need four points")
    if isinstance(metric_or_kernel, KernelMatrix):
        mu = metric_or_kernel.mu if mu is None else mu
        M = metric_or_kernel.values
        r = lambda i, j: float(M[quad[i], quad[j]])
        same = lambda i, j: quad[i] == quad[j]
    elif callable(metric_or_kernel):
        r = lambda i, j: float(metric_or_kernel(quad[i], quad[j]))
        same = lambda i, j: quad[i] == quad[j]
    else:
        M = np.asarray(metric_or_kernel, float)
        r = lambda i, j: float(M[quad[i], quad[j]])
        same = lambda i, j: quad[i] == quad[j]
    mu = math.e if mu is None else mu
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    vals = {}
    for i, j in pairs:
        if same(i, j):
            raise DegenerateQuadruple(f"points {i + 1} and {j + 1} coincide")
        vals[i, j] = r(i, j)
        if vals[i, j] <= 0:
            raise DegenerateQuadruple(f"points {i + 1} and {j + 1} are at distance 0")
    ratio = vals[0, 2] * vals[1, 3] / (vals[0, 3] * vals[1, 2])
    lp = max(0.0, math.log(ratio) / math.log(mu))
    if products is None:
        gp = [-math.log(vals[p]) / math.log(mu) for p in pairs]
    elif callable(products):
        gp = [products(quad[i], quad[j]) for i, j in pairs]
    else:
        P = np.asarray(products, float)
        gp = [float(P[quad[i], quad[j]]) for i, j in pairs]
    return CrossRatioResult(ratio, lp, max(gp), min(gp))


def log_ratio_gap_bound(mu):
    """Allowed |log_mu [.]_kernel - log_mu [.]_chain|: log_mu 16 from the Frink sandwich."""
    return math.log(16.0) / math.log(mu)


# -- cross-ratio versus distance between geodesics -------------------------

def _generic_line_distance(space, g1, g2):
    def f(st):
        return space.distance(g1.point(float(st[0])), g2.point(float(st[1])))
    best = None
    for s0 in (-2.0, 0.0, 2.0):
        for t0 in (-2.0, 0.0, 2.0):
            res = minimize(f, np.array([s0, t0]), method="Nelder-Mead",
                           options={"xatol": 1e-9, "fatol": 1e-10, "maxiter": 4000})
            if best is None or res.fun < best:
                best = float(res.fun)
    return best


def xratio_vs_geodesic_distance(space, xis):
    """(d(chi14, chi23), log_plus of the visual cross-ratio, |difference|).

    The cross-ratio is taken for a visual kernel mu^-(.|.)_o at the basepoint; in
    the half-plane with mu = e this kernel is half the chordal metric of the disk.
    """
    x1, x2, x3, x4 = xis
    if len({x1, x2, x3, x4}) < 4:
        raise DegenerateQuadruple("boundary points must be pairwise distinct")
    g14 = space.geodesic_between(x1, x4)
    g23 = space.geodesic_between(x2, x3)
    if isinstance(space, HalfPlane):
        d = space.line_distance(g14, g23)
    else:
        d = _generic_line_distance(space, g14, g23)
    gp = lambda a, b: boundary_gromov_product(space, a, b)
    # for rho = mu^-(.|.) the base-mu log of the ratio is a sum of Gromov
    # products whatever mu is; this also avoids tiny kernel values
    lp = max(0.0, gp(x1, x4) + gp(x2, x3) - gp(x1, x3) - gp(x2, x4))
    return d, lp, abs(lp - d)


def separated_quadruple(space, R, rng):
    """Ideal points -R a, -b, c, R e with a, b, c, e in [1/2, 2]; chi14 and chi23 are about log R apart."""
    a, b, c, e = rng.uniform(0.5, 2.0, size=4)
    return (space.ideal(-R * a), space.ideal(-b), space.ideal(c), space.ideal(R * e))


@dataclass
class GapSweep:
    R_values: list
    max_gaps: list
    slope: float
    overall_max: float

    def to_dict(self):
        return dict(self.__dict__)


def prop13_sweep(space=None, R_values=(1e1, 1e2, 1e3, 1e4, 1e5, 1e6), per_R=500, n_random=10_000, seed=0):
    """Measure the gap constant on random quadruples and on separated families.

    Returns the per-R maximal gap on `separated_quadruple` families, the least
    squares slope of that maximum against log R, and the maximum over both the
    families and `n_random` uniformly random quadruples.
    """
    space = HalfPlane() if space is None else space
    rng = make_rng(seed)
    max_gaps = []
    for R in R_values:
        m = 0.0
        for _ in range(per_R):
            m = max(m, xratio_vs_geodesic_distance(space, separated_quadruple(space, R, rng))[2])
        max_gaps.append(m)
    overall = max(max_gaps)
    for _ in range(n_random):
        q = tuple(space.sample_ideal(rng) for _ in range(4))
        if len(set(q)) < 4:
            continue
        overall = max(overall, xratio_vs_geodesic_distance(space, q)[2])
    slope = float(np.polyfit(np.log(np.asarray(R_values, float)), np.asarray(max_gaps), 1)[0])
    return GapSweep(list(map(float, R_values)), max_gaps, slope, overall)
