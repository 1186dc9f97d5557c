"""Pointed hyperbolic model spaces with exact distances, geodesics and boundaries.

Models: the upper half-plane, the hyperboloid model of H^n, the regular tree of
valence q, and a log-model of a Heintze group N x| R.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .heintze import HeintzeSpec

PROJ_TOL = 1e-7


class SpaceError(ValueError):
    pass


class ModelMismatch(SpaceError):
    pass


class DegenerateEndpoints(SpaceError):
    pass


class NonConvergence(RuntimeError):
    pass


class InvalidRegion(SpaceError):
    pass


def make_rng(seed):
    """Counter-based generator; every random draw in the package goes through here."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class Point:
    model: str
    coords: tuple

    def array(self):
        return np.asarray(self.coords, float)


@dataclass(frozen=True)
class BoundaryPoint:
    """Ideal point. `coords` is model specific:

    HalfPlane: (x,) or ("inf",); Hyperboloid: unit vector; tree: (prefix, period);
    HeintzeLog: N-coordinates or ("omega",).
    """
    model: str
    coords: tuple

    @property
    def is_infinite(self):
        return self.coords and self.coords[0] in ("inf", "omega")


class GeodesicLine:
    """Unit-speed geodesic s -> point(s) on [s_min, s_max] (either end may be infinite)."""

    def __init__(self, space, start, end, point_fn, s_min, s_max):
        self.space = space
        self.start = start
        self.end = end
        self._point = point_fn
        self.s_min = s_min
        self.s_max = s_max

    def __call__(self, s):
        return self.point(s)

    def point(self, s):
        if s < self.s_min - 1e-12 or s > self.s_max + 1e-12:
            raise ValueError(f"parameter {s} outside [{self.s_min}, {self.s_max}]")
        return self._point(min(max(s, self.s_min), self.s_max))

    @property
    def length(self):
        return self.s_max - self.s_min


class ModelSpace:
    tag = "abstract"

    @property
    def basepoint(self):
        raise NotImplementedError

    def _check(self, *pts):
        for p in pts:
            if p.model != self.tag:
                raise ModelMismatch(f"{p.model} point given to {self.tag} space")

    def distance(self, a, b):
        self._check(a, b)
        return self._distance(a, b)

    def distance_matrix(self, points):
        n = len(points)
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(i):
                D[i, j] = D[j, i] = self._distance(points[i], points[j])
        return D

    def geodesic_between(self, a, b):
        self._check(a, b)
        if a == b:
            raise DegenerateEndpoints("geodesic endpoints coincide")
        return self._geodesic(a, b)

    def project_to_geodesic(self, gamma, b):
        """Closest point of gamma to b and its parameter (doubling bracket + golden section)."""
        self._check(b)
        f = lambda s: self._distance(b, gamma.point(s))
        lo_lim, hi_lim = gamma.s_min, gamma.s_max
        if math.isfinite(lo_lim) and math.isfinite(hi_lim):
            s = _bounded_min(f, lo_lim, hi_lim)
            return gamma.point(s), s
        s0 = min(max(0.0, lo_lim), hi_lim)
        step = 1.0
        a, b_, c = s0 - step, s0, s0 + step
        a = max(a, lo_lim)
        c = min(c, hi_lim)
        fa, fb, fc = f(a), f(b_), f(c)
        for _ in range(200):
            if fb <= fa and fb <= fc:
                break
            step *= 2.0
            if fa < fb:
                c, fc = b_, fb
                b_, fb = a, fa
                a = max(b_ - step, lo_lim)
                fa = f(a)
            else:
                a, fa = b_, fb
                b_, fb = c, fc
                c = min(b_ + step, hi_lim)
                fc = f(c)
            if a == b_ or b_ == c:
                # hit a finite end of a ray
                break
        else:
            raise NonConvergence("projection bracket did not close")
        s = _bounded_min(f, a, c)
        return gamma.point(s), s

    # boundary helpers used by the visual-boundary module
    def ray(self, xi):
        """Geodesic ray from the basepoint to the ideal point xi, parametrized from 0."""
        return self.geodesic_between(self.basepoint, xi)

    def sample_points(self, region, n, rng):
        raise NotImplementedError

    def sample_configuration(self, region, n, seed):
        if n < 1:
            raise InvalidRegion("need n >= 1")
        region = _check_region(region)
        rng = make_rng(seed)
        pts = self.sample_points(region, n, rng)
        return Configuration(pts, self.distance_matrix(pts), 0, self.tag, seed=seed)


def _bounded_min(f, a, c):
    if c - a <= PROJ_TOL:
        return 0.5 * (a + c)
    res = minimize_scalar(f, bounds=(a, c), method="bounded", options={"xatol": PROJ_TOL * 0.1})
    if not res.success:
        raise NonConvergence(res.message)
    s = float(res.x)
    # the bounded method never evaluates the endpoints
    for e in (a, c):
        if f(e) < f(s):
            s = e
    return s


def _check_region(region):
    if region is None:
        raise InvalidRegion("region required")
    if isinstance(region, (int, float)):
        region = {"kind": "ball", "radius": float(region)}
    region = dict(region)
    r = region.get("radius")
    if region.get("kind", "ball") != "ball" or r is None:
        raise InvalidRegion("only bounded balls about the basepoint are supported")
    if not (math.isfinite(r) and r > 0):
        raise InvalidRegion("radius must be positive and finite")
    region.setdefault("kind", "ball")
    region.setdefault("law", "volume")
    return region


# -- hyperbolic radial law -------------------------------------------------

def _radial_sample(rng, R, dim, law, size):
    u = rng.random(size)
    if law == "uniform_radius":
        return u * R
    # density proportional to sinh^(dim-1)(r) on [0, R]; invert a tabulated CDF
    r = np.linspace(0.0, R, 4097)
    dens = np.sinh(r) ** (dim - 1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    cdf /= cdf[-1]
    return np.interp(u, cdf, r)


def _unit_vectors(rng, dim, size):
    v = rng.normal(size=(size, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# -- half-plane ------------------------------------------------------------

class HalfPlane(ModelSpace):
    """Upper half-plane {(x, t) : t > 0} with basepoint (0, 1)."""

    tag = "HalfPlane"

    @property
    def basepoint(self):
        return Point(self.tag, (0.0, 1.0))

    def point(self, x, t):
        if not t > 0:
            raise SpaceError("half-plane points need t > 0")
        return Point(self.tag, (float(x), float(t)))

    def ideal(self, x):
        if x == math.inf or x == "inf":
            return BoundaryPoint(self.tag, ("inf",))
        return BoundaryPoint(self.tag, (float(x),))

    @staticmethod
    def dist_xt(x1, t1, x2, t2):
        # 2 asinh(|a-b| / (2 sqrt(t_a t_b))) equals arccosh(1 + |a-b|^2/(2 t_a t_b)) without cancellation
        # evaluated through logs so that points near the boundary neither underflow nor overflow
        h = np.hypot(np.subtract(x1, x2), np.subtract(t1, t2))
        with np.errstate(divide="ignore"):
            lq = np.log(h) - math.log(2.0) - 0.5 * (np.log(t1) + np.log(t2))
        big = lq > 20.0
        small = 2.0 * np.arcsinh(np.exp(np.where(big, 0.0, lq)))
        return np.where(big, 2.0 * (lq + math.log(2.0)), small)

    def _distance(self, a, b):
        return float(self.dist_xt(a.coords[0], a.coords[1], b.coords[0], b.coords[1]))

    def distance_matrix(self, points):
        P = np.array([p.coords for p in points], float).reshape(-1, 2)
        D = self.dist_xt(P[:, None, 0], P[:, None, 1], P[None, :, 0], P[None, :, 1])
        np.fill_diagonal(D, 0.0)
        return 0.5 * (D + D.T)

    # a line is ("v", x0) with u = log t, or ("c", e1, e2) with real endpoints
    # e1 < e2 and u = log(|z - e1| / |z - e2|). Keeping the endpoints (rather
    # than centre and radius) preserves the near endpoint when the other one
    # is astronomically far away.
    @staticmethod
    def _circle_roots(c, x, t):
        """Endpoints of the circle centred at c through (x, t), computed stably."""
        rho = math.hypot(x - c, t)
        far = c + math.copysign(rho, c) if c != 0 else rho
        prod = x * (2.0 * c - x) - t * t
        near = prod / far
        return ("c", min(far, near), max(far, near))

    @classmethod
    def _line_through(cls, a, b):
        if isinstance(a, BoundaryPoint) and isinstance(b, BoundaryPoint):
            if a.is_infinite or b.is_infinite:
                x0 = (b if a.is_infinite else a).coords[0]
                return ("v", x0)
            x1, x2 = a.coords[0], b.coords[0]
            return ("c", min(x1, x2), max(x1, x2))
        if isinstance(a, BoundaryPoint):
            a, b = b, a
        xa, ta = a.coords
        if isinstance(b, BoundaryPoint):
            if b.is_infinite or b.coords[0] == xa:
                return ("v", xa)
            xi = b.coords[0]
            # (xa - xi)(xa - eta) + ta^2 = 0
            eta = xa + ta * ta / (xa - xi)
            return ("c", min(xi, eta), max(xi, eta))
        xb, tb = b.coords
        if xa == xb:
            return ("v", xa)
        c = ((xb - xa) * (xb + xa) + (tb - ta) * (tb + ta)) / (2 * (xb - xa))
        # evaluate the root product with the smaller point for accuracy
        x, t = (xa, ta) if abs(xa) + ta <= abs(xb) + tb else (xb, tb)
        return cls._circle_roots(c, x, t)

    @staticmethod
    def _line_point(line, u):
        if line[0] == "v":
            return (line[1], math.exp(u))
        _, e1, e2 = line
        # z = e1 + (e2 - e1) w / (1 + w), w = i e^u, written from the nearer end
        if u < 0:
            w = 1j * math.exp(u)
            z = e1 + (e2 - e1) * w / (1 + w)
        else:
            v = -1j * math.exp(-u)
            z = e2 - (e2 - e1) * v / (1 + v)
        return (z.real, max(z.imag, 0.0))

    @staticmethod
    def fermi_point(line, u, D):
        """Point at signed distance D from the line, projecting to line coordinate u.

        On the imaginary axis this is e^u (tanh D + i sech D); the line is the
        image of the axis under z -> (e2 z + e1) / (z + 1).
        """
        w = complex(math.tanh(D), 1.0 / math.cosh(D))
        if line[0] == "v":
            z = line[1] + math.exp(u) * w
            return (z.real, max(z.imag, 0.0))
        _, e1, e2 = line
        if u < 0:
            w = math.exp(u) * w
            z = e1 + (e2 - e1) * w / (1 + w)
        else:
            v = math.exp(-u) * w.conjugate()
            z = e2 - (e2 - e1) * v / (1 + v)
        return (z.real, max(z.imag, 0.0))

    @staticmethod
    def _line_coord(line, p):
        """Arclength coordinate of a point or ideal endpoint on the line."""
        if isinstance(p, BoundaryPoint):
            if line[0] == "v":
                return math.inf if p.is_infinite else -math.inf
            return math.inf if p.coords[0] > 0.5 * (line[1] + line[2]) else -math.inf
        x, t = p.coords
        if line[0] == "v":
            return math.log(t)
        return math.log(math.hypot(x - line[1], t) / math.hypot(x - line[2], t))

    def _geodesic(self, a, b):
        line = self._line_through(a, b)
        ua, ub = self._line_coord(line, a), self._line_coord(line, b)
        sign = 1.0 if ub > ua else -1.0
        if isinstance(a, Point):
            origin, s_min, s_max = ua, 0.0, abs(ub - ua)
        elif isinstance(b, Point):
            origin, s_min, s_max = ub, -math.inf, 0.0
        else:
            origin, s_min, s_max = 0.0, -math.inf, math.inf
        if isinstance(a, BoundaryPoint) and isinstance(b, BoundaryPoint):
            origin = self._proj_coord(line, self.basepoint)
        fn = lambda s: Point(self.tag, self._line_point(line, origin + sign * s))
        g = GeodesicLine(self, a, b, fn, s_min, s_max)
        g.frame = (line, origin, sign)
        return g

    @staticmethod
    def _proj_coord(line, p):
        """Line coordinate of the orthogonal projection of a point or ideal point.

        A Moebius map sends the line to the imaginary axis; projection to the
        axis keeps |z|, and the axis coordinate is log|z|.
        """
        if isinstance(p, BoundaryPoint):
            if p.is_infinite:
                return math.inf if line[0] == "v" else 0.0
            x, t = p.coords[0], 0.0
        else:
            x, t = p.coords
        if line[0] == "v":
            return math.log(math.hypot(x - line[1], t))
        _, e1, e2 = line
        return math.log(math.hypot(x - e1, t) / math.hypot(x - e2, t))

    def projection_parameter(self, gamma, p):
        """Parameter of p_gamma(p), clamped to the domain; p may be ideal."""
        line, origin, sign = gamma.frame
        s = sign * (self._proj_coord(line, p) - origin)
        return min(max(s, gamma.s_min), gamma.s_max)

    def project_to_geodesic(self, gamma, b):
        self._check(b)
        if getattr(gamma, "frame", None) is None:
            return super().project_to_geodesic(gamma, b)
        s = self.projection_parameter(gamma, b)
        return gamma.point(s), s

    # -- closed forms on the ideal boundary ------------------------------
    def boundary_gromov_product(self, xi, eta):
        """(xi|eta)_o = -log sin(theta/2), theta the visual angle at o = i.

        Through the Cayley map the half chord is |x - y| / (sqrt(1+x^2) sqrt(1+y^2)),
        evaluated in logs so that far-out endpoints keep their separation.
        """
        if xi.is_infinite and eta.is_infinite:
            return math.inf
        if xi.is_infinite or eta.is_infinite:
            y = (eta if xi.is_infinite else xi).coords[0]
            return max(0.0, math.log(math.hypot(1.0, y)))
        x, y = xi.coords[0], eta.coords[0]
        if x == y:
            return math.inf
        return max(0.0, math.log(math.hypot(1.0, x)) + math.log(math.hypot(1.0, y)) - math.log(abs(x - y)))

    def sample_ideal(self, rng):
        phi = rng.uniform(0.0, 2 * math.pi)
        return self.ideal(-1.0 / math.tan(phi / 2.0))

    @staticmethod
    def _endpoints_real(gamma):
        out = []
        for e in (gamma.start, gamma.end):
            if not isinstance(e, BoundaryPoint):
                raise SpaceError("need a bi-infinite geodesic")
            out.append(math.inf if e.is_infinite else e.coords[0])
        return out

    def line_distance(self, g1, g2):
        """Distance between two bi-infinite geodesics (0 when they cross).

        Normalizing g1 to (0, inf) by M, cosh(Delta) = (r + 1)/(r - 1) with
        r = |M(c)/M(d)| when M(c), M(d) have the same sign.
        """
        a, b = self._endpoints_real(g1)
        c, d = self._endpoints_real(g2)
        if a == math.inf:
            a, b = b, a
        def m(z):
            if z == math.inf:
                return -1.0 if b != math.inf else math.inf
            if b == math.inf:
                return z - a
            return (z - a) / (b - z)
        mc, md = m(c), m(d)
        if mc == math.inf or md == math.inf:
            other = md if mc == math.inf else mc
            return 0.0 if other < 0 else math.nan
        if mc * md <= 0:
            return 0.0
        r = abs(mc / md)
        r = max(r, 1.0 / r)
        return math.acosh((r + 1.0) / (r - 1.0))

    # -- isometries and local sampling ------------------------------------
    @staticmethod
    def random_isometry(rng, scale=3.0):
        """Random element of PSL(2, R) as a 2x2 matrix (rotation about i, then affine)."""
        th = rng.uniform(0.0, math.pi)
        R = np.array([[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]])
        tau = rng.uniform(-scale, scale)
        x0 = rng.uniform(-scale, scale)
        A = np.array([[math.exp(tau / 2), x0 * math.exp(-tau / 2)], [0.0, math.exp(-tau / 2)]])
        return A @ R

    def apply_isometry(self, M, p):
        (a, b), (c, d) = M
        if isinstance(p, BoundaryPoint):
            if p.is_infinite:
                return self.ideal(math.inf) if c == 0 else self.ideal(a / c)
            x = p.coords[0]
            den = c * x + d
            return self.ideal(math.inf) if den == 0 else self.ideal((a * x + b) / den)
        z = complex(*p.coords)
        w = (a * z + b) / (c * z + d)
        return Point(self.tag, (w.real, w.imag))

    def exp_point(self, p, r, phi):
        """Point at distance r from p in direction phi (phi = pi/2 points straight up)."""
        x0, t0 = p.coords
        X0, X1, X2 = math.cosh(r), math.sinh(r) * math.cos(phi), math.sinh(r) * math.sin(phi)
        t = 1.0 / (X0 - X2)
        return Point(self.tag, (x0 + t0 * X1 * t, t0 * t))

    def boundary_coordinate(self, p):
        x, t = p.coords
        return x

    def sample_points(self, region, n, rng):
        region = _check_region(region)
        R = region["radius"]
        r = _radial_sample(rng, R, 2, region["law"], n)
        phi = rng.uniform(0.0, 2 * math.pi, n)
        # hyperboloid polar coordinates -> half-plane via the Cayley map
        X0, X1, X2 = np.cosh(r), np.sinh(r) * np.cos(phi), np.sinh(r) * np.sin(phi)
        t = 1.0 / (X0 - X2)
        x = X1 * t
        pts = [Point(self.tag, (float(a), float(b))) for a, b in zip(x, t)]
        pts[0] = self.basepoint if n >= 1 and region.get("include_basepoint", True) else pts[0]
        return pts


# -- hyperboloid -----------------------------------------------------------

def _mink(x, y):
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


class HyperboloidN(ModelSpace):
    """H^n as {x : <x, x> = -1, x_0 > 0} in R^(n,1); basepoint e_0."""

    def __init__(self, dim=2):
        if dim < 2:
            raise SpaceError("need dim >= 2")
        self.dim = dim
        self.tag = f"HyperboloidN({dim})"

    @property
    def basepoint(self):
        return Point(self.tag, (1.0,) + (0.0,) * self.dim)

    def from_polar(self, r, direction):
        u = np.asarray(direction, float)
        u = u / np.linalg.norm(u)
        return Point(self.tag, tuple([math.cosh(r)] + list(math.sinh(r) * u)))

    def ideal(self, direction):
        u = np.asarray(direction, float)
        return BoundaryPoint(self.tag, tuple(u / np.linalg.norm(u)))

    @staticmethod
    def _dist_arr(x, y):
        diff = x - y
        q = np.maximum(_mink(diff, diff), 0.0)
        small = 2.0 * np.arcsinh(np.sqrt(q) / 2.0)
        big = np.arccosh(np.maximum(-_mink(x, y), 1.0))
        return np.where(q < 4.0, small, big)

    def _distance(self, a, b):
        return float(self._dist_arr(a.array(), b.array()))

    def distance_matrix(self, points):
        P = np.array([p.coords for p in points], float)
        D = self._dist_arr(P[:, None, :], P[None, :, :])
        np.fill_diagonal(D, 0.0)
        return 0.5 * (D + D.T)

    def _null(self, xi):
        return np.concatenate([[1.0], np.asarray(xi.coords, float)])

    def _geodesic(self, a, b):
        tag = self.tag
        if isinstance(a, Point) and isinstance(b, Point):
            x, y = a.array(), b.array()
            d = self._distance(a, b)
            v = (y - math.cosh(d) * x) / math.sinh(d)
            fn = lambda s: Point(tag, tuple(math.cosh(s) * x + math.sinh(s) * v))
            return GeodesicLine(self, a, b, fn, 0.0, d)
        if isinstance(a, Point) or isinstance(b, Point):
            p, xi = (a, b) if isinstance(a, Point) else (b, a)
            x = p.array()
            N = self._null(xi)
            v = -N / _mink(x, N) - x
            if isinstance(a, Point):
                fn = lambda s: Point(tag, tuple(math.cosh(s) * x + math.sinh(s) * v))
                return GeodesicLine(self, a, b, fn, 0.0, math.inf)
            fn = lambda s: Point(tag, tuple(math.cosh(s) * x - math.sinh(s) * v))
            return GeodesicLine(self, a, b, fn, -math.inf, 0.0)
        N1, N2 = self._null(a), self._null(b)
        k = math.sqrt(-2.0 * _mink(N1, N2))
        o = self.basepoint.array()
        A, B = -_mink(o, N2), -_mink(o, N1)
        s0 = 0.5 * math.log(B / A)
        fn = lambda s: Point(tag, tuple((math.exp(s + s0) * N2 + math.exp(-s - s0) * N1) / k))
        return GeodesicLine(self, a, b, fn, -math.inf, math.inf)

    def sample_points(self, region, n, rng):
        region = _check_region(region)
        R = region["radius"]
        r = _radial_sample(rng, R, self.dim, region["law"], n)
        U = _unit_vectors(rng, self.dim, n)
        X = np.column_stack([np.cosh(r), np.sinh(r)[:, None] * U])
        pts = [Point(self.tag, tuple(map(float, row))) for row in X]
        if region.get("include_basepoint", True):
            pts[0] = self.basepoint
        return pts


# -- regular tree ----------------------------------------------------------

class RegularTree(ModelSpace):
    """Regular tree of valence q rooted at the empty word.

    Vertices are reduced words: the first letter is in range(q), later letters
    in range(q - 1). Ends are eventually periodic rays (prefix, period).
    """

    def __init__(self, valence=3):
        if valence < 3:
            raise SpaceError("valence must be >= 3")
        self.q = valence
        self.tag = f"RegularTree({valence})"

    @property
    def basepoint(self):
        return Point(self.tag, ())

    def vertex(self, word):
        word = tuple(int(c) for c in word)
        for i, c in enumerate(word):
            if not 0 <= c < (self.q if i == 0 else self.q - 1):
                raise SpaceError(f"letter {c} at position {i} is not reduced")
        return Point(self.tag, word)

    def end(self, prefix, period):
        prefix = tuple(int(c) for c in prefix)
        period = tuple(int(c) for c in period)
        if not period:
            raise SpaceError("ray period must be nonempty")
        if not prefix:
            prefix, period = period[:1], period[1:] + period[:1]
        self.vertex(prefix + period)
        if any(not 0 <= c < self.q - 1 for c in period):
            raise SpaceError("period letters must be < q - 1")
        # canonical form: primitive period, shortest nonempty prefix
        n = len(period)
        for p in range(1, n + 1):
            if n % p == 0 and period == period[:p] * (n // p):
                period = period[:p]
                break
        while len(prefix) > 1 and prefix[-1] == period[-1]:
            prefix, period = prefix[:-1], (period[-1],) + period[:-1]
        return BoundaryPoint(self.tag, (prefix, period))

    @staticmethod
    def word_prefix(x, L):
        """First L letters of a vertex word or ray."""
        if isinstance(x, Point):
            return x.coords[:L]
        prefix, period = x.coords
        out = list(prefix[:L])
        i = 0
        while len(out) < L:
            out.append(period[i % len(period)])
            i += 1
        return tuple(out)

    @classmethod
    def _meet_len(cls, x, y):
        # common prefix length; distinct ends share a finite prefix
        if isinstance(x, Point) and isinstance(y, Point):
            n = min(len(x.coords), len(y.coords))
            if n < 64:
                k = 0
                while k < n and x.coords[k] == y.coords[k]:
                    k += 1
                return k
            diff = np.flatnonzero(np.fromiter(x.coords[:n], np.int64, n) != np.fromiter(y.coords[:n], np.int64, n))
            return int(diff[0]) if diff.size else n
        lx = len(x.coords) if isinstance(x, Point) else math.inf
        ly = len(y.coords) if isinstance(y, Point) else math.inf
        cap = min(lx, ly)
        if cap == math.inf:
            cap = len(x.coords[0]) + len(y.coords[0]) + len(x.coords[1]) * len(y.coords[1]) + 1
        wx, wy = cls.word_prefix(x, cap), cls.word_prefix(y, cap)
        k = 0
        while k < cap and wx[k] == wy[k]:
            k += 1
        return k

    def _distance(self, a, b):
        k = self._meet_len(a, b)
        return float(len(a.coords) + len(b.coords) - 2 * k)

    def distance_matrix(self, points):
        n = len(points)
        L = max((len(p.coords) for p in points), default=0)
        W = np.full((n, L + 1), -1, dtype=np.int64)
        for i, p in enumerate(points):
            W[i, : len(p.coords)] = p.coords
        lens = np.array([len(p.coords) for p in points])
        eq = (W[:, None, :] == W[None, :, :]) & (W[:, None, :] >= 0)
        meet = np.cumprod(eq, axis=2).sum(axis=2)
        return (lens[:, None] + lens[None, :] - 2 * meet).astype(float)

    def _geodesic(self, a, b):
        k = self._meet_len(a, b)
        la = len(a.coords) - k if isinstance(a, Point) else math.inf
        lb = len(b.coords) - k if isinstance(b, Point) else math.inf
        tag = self.tag

        def at(u):
            # u in [-la, lb] measured from the meet vertex
            u = int(round(u))
            if u <= 0:
                return Point(tag, self.word_prefix(a, k - u))
            return Point(tag, self.word_prefix(b, k + u))

        if isinstance(a, Point):
            return GeodesicLine(self, a, b, lambda s: at(s - la), 0.0, la + lb)
        if isinstance(b, Point):
            return GeodesicLine(self, a, b, lambda s: at(s + lb), -math.inf, 0.0)
        # both ideal: the meet vertex is the projection of the root
        return GeodesicLine(self, a, b, at, -math.inf, math.inf)

    def project_to_geodesic(self, gamma, b):
        """Tree projection: the median of b and the two endpoints."""
        self._check(b)
        x, y = gamma.start, gamma.end
        kxy = self._meet_len(x, y)
        kbx = self._meet_len(b, x)
        kby = self._meet_len(b, y)
        # the median is the longest of the three pairwise meets
        if kbx >= kby and kbx >= kxy:
            m = Point(self.tag, self.word_prefix(x, kbx))
            u = -(kbx - kxy)
        elif kby >= kxy:
            m = Point(self.tag, self.word_prefix(y, kby))
            u = kby - kxy
        else:
            m = Point(self.tag, self.word_prefix(x, kxy))
            u = 0
        if isinstance(x, Point):
            s = u + (len(x.coords) - kxy)
        elif isinstance(y, Point):
            s = u - (len(y.coords) - kxy)
        else:
            s = u
        return m, float(s)

    def sample_points(self, region, n, rng):
        region = _check_region(region)
        R = int(math.floor(region["radius"]))
        q = self.q
        # vertex count on the sphere of radius L is q (q-1)^(L-1)
        # log of the sphere sizes, to stay finite for large radii
        logc = np.array([0.0] + [math.log(q) + (L - 1) * math.log(q - 1.0) for L in range(1, R + 1)])
        if region["law"] == "uniform_radius":
            logc = np.zeros_like(logc)
        w = np.exp(logc - logc.max())
        lengths = rng.choice(R + 1, size=n, p=w / w.sum())
        pts = []
        for L in lengths:
            if L == 0:
                pts.append(self.basepoint)
                continue
            first = rng.integers(0, q)
            rest = rng.integers(0, q - 1, size=L - 1)
            pts.append(Point(self.tag, (int(first),) + tuple(int(c) for c in rest)))
        if region.get("include_basepoint", True):
            pts[0] = self.basepoint
        return pts


class RayComb(ModelSpace):
    """The regular tree seen from a fixed ray omega = 0 0 0 ...

    A vertex is (m, b): walk m steps along the ray, then follow the branch word
    b, whose first letter leaves the ray. Coordinates are (m,) + b. This is
    the vertex 0^m b of RegularTree(q), stored so that points at distance
    10^7 along the ray stay cheap.
    """

    def __init__(self, valence=3):
        if valence < 3:
            raise SpaceError("valence must be >= 3")
        self.q = valence
        self.tag = f"RayComb({valence})"

    @property
    def basepoint(self):
        return Point(self.tag, (0,))

    @property
    def omega(self):
        return BoundaryPoint(self.tag, ("omega",))

    def vertex(self, m, branch=()):
        m = int(m)
        branch = tuple(int(c) for c in branch)
        if m < 0:
            raise SpaceError("ray position must be >= 0")
        if branch:
            top = self.q if m == 0 else self.q - 1
            if not 1 <= branch[0] < top:
                raise SpaceError("branch must leave the ray")
            if any(not 0 <= c < self.q - 1 for c in branch[1:]):
                raise SpaceError("branch letters must be < q - 1")
        return Point(self.tag, (m,) + branch)

    def branch_letters(self, m):
        """Letters that leave the ray at position m."""
        return range(1, self.q if m == 0 else self.q - 1)

    def to_tree_word(self, p):
        m, b = p.coords[0], p.coords[1:]
        return (0,) * m + b

    def _distance(self, a, b):
        m1, b1 = a.coords[0], a.coords[1:]
        m2, b2 = b.coords[0], b.coords[1:]
        if m1 != m2:
            return float(abs(m1 - m2) + len(b1) + len(b2))
        k = 0
        n = min(len(b1), len(b2))
        while k < n and b1[k] == b2[k]:
            k += 1
        return float(len(b1) + len(b2) - 2 * k)

    def _geodesic(self, a, b):
        tag = self.tag
        if isinstance(a, BoundaryPoint) or isinstance(b, BoundaryPoint):
            if isinstance(a, BoundaryPoint) and isinstance(b, BoundaryPoint):
                raise DegenerateEndpoints("the comb has a single ideal point")
            p = a if isinstance(a, Point) else b
            m, br = p.coords[0], p.coords[1:]
            # up the branch, then along the ray
            at = lambda s: (Point(tag, (m,) + br[:len(br) - int(round(s))]) if s <= len(br)
                            else Point(tag, (m + int(round(s)) - len(br),)))
            if isinstance(a, Point):
                return GeodesicLine(self, a, b, at, 0.0, math.inf)
            return GeodesicLine(self, a, b, lambda s: at(-s), -math.inf, 0.0)
        m1, b1 = a.coords[0], a.coords[1:]
        m2, b2 = b.coords[0], b.coords[1:]
        if m1 == m2:
            k = 0
            while k < min(len(b1), len(b2)) and b1[k] == b2[k]:
                k += 1
        else:
            k = 0
        up, down = len(b1) - k, len(b2) - k
        gap = abs(m2 - m1)
        step = 1 if m2 > m1 else -1

        def at(s):
            s = int(round(s))
            if s <= up:
                return Point(tag, (m1,) + b1[:len(b1) - s])
            if s <= up + gap:
                return Point(tag, (m1 + step * (s - up),))
            return Point(tag, (m2,) + b2[:k + s - up - gap])

        return GeodesicLine(self, a, b, at, 0.0, float(up + gap + down))

    def project_to_geodesic(self, gamma, b):
        self._check(b)
        if gamma.start == self.basepoint and isinstance(gamma.end, BoundaryPoint):
            m = b.coords[0]
            return Point(self.tag, (m,)), float(m)
        return super().project_to_geodesic(gamma, b)

    def sample_points(self, region, n, rng):
        region = _check_region(region)
        R = int(math.floor(region["radius"]))
        pts = []
        for _ in range(n):
            m = int(rng.integers(0, R + 1))
            L = int(rng.integers(0, R - m + 1))
            if L == 0:
                pts.append(Point(self.tag, (m,)))
                continue
            first = int(rng.choice(list(self.branch_letters(m))))
            rest = rng.integers(0, self.q - 1, size=L - 1)
            pts.append(Point(self.tag, (m, first) + tuple(int(c) for c in rest)))
        if region.get("include_basepoint", True) and pts:
            pts[0] = self.basepoint
        return pts


# -- Heintze log-model -------------------------------------------------------

class HeintzeLog(ModelSpace):
    """Points (n, s) of N x R with the log-model distance

        d((n, s), (n', t)) = 2 log max(rho(n, n'), e^s, e^t) - s - t.

    This is a quasi-metric within an additive constant A of the Heintze metric.
    """

    def __init__(self, spec: HeintzeSpec):
        if not spec.normalized:
            raise SpaceError("HeintzeLog needs a normalized spec")
        self.spec = spec
        self.tag = f"HeintzeLog({spec.n_type},{','.join(f'{l:g}x{s}' for l, s in spec.blocks)})"
        self._slack = None

    @property
    def basepoint(self):
        return Point(self.tag, (0.0,) * self.spec.dim + (0.0,))

    def point(self, n, s):
        return Point(self.tag, tuple(float(c) for c in n) + (float(s),))

    def ideal(self, n=None):
        if n is None:
            return BoundaryPoint(self.tag, ("omega",))
        return BoundaryPoint(self.tag, tuple(float(c) for c in n))

    def _dist_arr(self, A, B):
        n1, s = A[..., :-1], A[..., -1]
        n2, t = B[..., :-1], B[..., -1]
        rho = self.spec.quasimetric(n1, n2)
        m = np.maximum(np.maximum(s, t), np.log(np.maximum(rho, 1e-300)))
        return 2.0 * m - s - t

    def _distance(self, a, b):
        return float(self._dist_arr(a.array(), b.array()))

    def distance_matrix(self, points):
        P = np.array([p.coords for p in points], float)
        D = self._dist_arr(P[:, None, :], P[None, :, :])
        np.fill_diagonal(D, 0.0)
        return 0.5 * (D + D.T)

    def _geodesic(self, a, b):
        """Up-across-down path, which is an exact geodesic for the log-model formula."""
        tag = self.tag
        dimn = self.spec.dim

        def split(p):
            if isinstance(p, Point):
                c = p.coords
                return np.array(c[:dimn]), c[-1], False
            if p.is_infinite:
                return None, math.inf, True
            return np.array(p.coords), -math.inf, True

        na, sa, ia = split(a)
        nb, sb, ib = split(b)
        if na is None and nb is None:
            raise DegenerateEndpoints("both endpoints are omega")
        if na is None or nb is None:
            # vertical line through the N-coordinate of the finite end
            n0 = nb if na is None else na
            up = na is None  # a = omega: travel downward toward b
            fn_v = lambda h: Point(tag, tuple(map(float, n0)) + (float(h),))
            if isinstance(a, Point):
                return GeodesicLine(self, a, b, lambda s: fn_v(sa + (s if b.is_infinite else -s)), 0.0, math.inf)
            if isinstance(b, Point):
                return GeodesicLine(self, a, b, lambda s: fn_v(sb - (s if a.is_infinite else -s)), -math.inf, 0.0)
            # omega and a finite ideal point; re-centre at the projection of o
            sign = -1.0 if up else 1.0
            g = GeodesicLine(self, a, b, lambda s: fn_v(sign * s), -math.inf, math.inf)
            _, s0 = self.project_to_geodesic(g, self.basepoint)
            return GeodesicLine(self, a, b, lambda s: fn_v(sign * (s + s0)), -math.inf, math.inf)
        rho = float(self.spec.quasimetric(na, nb))
        h = max(math.log(rho) if rho > 0 else -math.inf, sa, sb)
        if not math.isfinite(h):
            raise DegenerateEndpoints("ideal endpoints coincide")
        la, lb = h - sa, h - sb

        def at(u):
            # u measured from the summit (n_a, h) -> (n_b, h); negative side toward a
            if u <= 0:
                return Point(tag, tuple(map(float, na)) + (float(h + u),))
            return Point(tag, tuple(map(float, nb)) + (float(h - u),))

        if isinstance(a, Point):
            return GeodesicLine(self, a, b, lambda s: at(s - la), 0.0, la + lb)
        if isinstance(b, Point):
            return GeodesicLine(self, a, b, lambda s: at(s + lb), -math.inf, 0.0)
        g = GeodesicLine(self, a, b, at, -math.inf, math.inf)
        _, s0 = self.project_to_geodesic(g, self.basepoint)
        return GeodesicLine(self, a, b, lambda s: at(s + s0), -math.inf, math.inf)

    def additive_slack(self, n_triples=20000, seed=0, radius=6.0):
        """Additive triangle defect A, cached.

        If rho(x, z) <= K max(rho(x, y), rho(y, z)) then A <= 2 log K, since
        both maxima in d(a,b) + d(b,c) dominate the height of b. K is measured
        on random triples over six decades of scales; the result is the larger
        of 2 log K and the largest defect seen on random triples of points.
        """
        if self._slack is None:
            from .heintze import ultrametric_constant
            K = max(ultrametric_constant(self.spec, 4000, seed, scale) for scale in np.geomspace(1e-3, 1e3, 7))
            rng = make_rng(seed)
            P = np.array([p.coords for p in self.sample_points({"radius": radius, "law": "volume"},
                                                                 3 * n_triples, rng)])
            P = P.reshape(3, n_triples, -1)
            ac = self._dist_arr(P[0], P[2])
            ab = self._dist_arr(P[0], P[1])
            bc = self._dist_arr(P[1], P[2])
            self._slack = float(max(0.0, np.max(ac - ab - bc), 2.0 * math.log(K)))
        return self._slack

    def sample_points(self, region, n, rng):
        region = _check_region(region)
        R = region["radius"]
        spec = self.spec
        out = []
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            s = rng.uniform(-R, R, m)
            # |(n, s) - o| <= R forces rho(n) <= e^((R + s)/2)
            rho = np.exp(0.5 * (R + s))
            if spec.is_diagonal or spec.n_type == "heisenberg":
                hw = rho[:, None] ** spec.eigenvalues
            else:
                hw = np.array([spec.box_halfwidths(r) for r in rho])
            N = (2 * rng.random((m, spec.dim)) - 1) * hw
            P = np.column_stack([N, s])
            keep = self._dist_arr(P, np.zeros(spec.dim + 1)) <= R
            out.extend(Point(self.tag, tuple(map(float, row))) for row in P[keep])
        out = out[:n]
        if region.get("include_basepoint", True):
            out[0] = self.basepoint
        return out


# -- configurations ----------------------------------------------------------

@dataclass
class Configuration:
    points: list
    dist: np.ndarray
    basepoint_index: int = 0
    model: str = "matrix"
    seed: int | None = None

    def __post_init__(self):
        self.dist = np.asarray(self.dist, float)
        if self.dist.ndim != 2 or self.dist.shape[0] != self.dist.shape[1]:
            raise SpaceError("distance matrix must be square")

    @property
    def n(self):
        return self.dist.shape[0]

    @classmethod
    def from_matrix(cls, D, basepoint_index=0, model="matrix"):
        return cls([None] * len(D), np.asarray(D, float), basepoint_index, model)

    def triangle_violation(self):
        """max_{i,j,k} D[i,k] - D[i,j] - D[j,k] (<= 0 for a metric)."""
        D = self.dist
        worst = -math.inf
        for j in range(self.n):
            worst = max(worst, float(np.max(D - D[:, j:j + 1] - D[j:j + 1, :])))
        return worst

    def check(self, tol=1e-9):
        D = self.dist
        if not np.allclose(D, D.T, atol=0.0, rtol=0.0):
            raise SpaceError("distance matrix is not symmetric")
        if np.any(np.diag(D) != 0):
            raise SpaceError("nonzero diagonal")
        if self.triangle_violation() > tol:
            raise SpaceError("triangle inequality fails")
        return True

    def to_json(self):
        il = np.tril_indices(self.n, -1)
        return json.dumps({
            "model": self.model,
            "points": [None if p is None else list(p.coords) for p in self.points],
            "basepoint": self.basepoint_index,
            "dist": [float(x) for x in self.dist[il]],
            "seed": self.seed,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, s):
        d = json.loads(s)
        pts = d["points"]
        n = len(pts)
        D = np.zeros((n, n))
        il = np.tril_indices(n, -1)
        D[il] = d["dist"]
        D = D + D.T
        points = [None if c is None else Point(d["model"], _untuple(c)) for c in pts]
        return cls(points, D, d["basepoint"], d["model"], d.get("seed"))


def _untuple(c):
    return tuple(_untuple(x) if isinstance(x, list) else x for x in c)


def make_space(name, **kw):
    """Build a model from a short name: halfplane, hyperboloid, tree, comb, heintze."""
    name = name.lower()
    if name in ("halfplane", "h2", "half-plane"):
        return HalfPlane()
    if name in ("hyperboloid", "hn"):
        return HyperboloidN(int(kw.get("dim", 2)))
    if name in ("tree", "regulartree"):
        return RegularTree(int(kw.get("valence", 3)))
    if name in ("comb", "raycomb"):
        return RayComb(int(kw.get("valence", 3)))
    if name in ("heintze", "heintzelog"):
        spec = kw.get("spec")
        if spec is None:
            spec = HeintzeSpec.abelian([1.0, 1.0])
        return HeintzeLog(spec)
    raise SpaceError(f"unknown model {name!r}")
