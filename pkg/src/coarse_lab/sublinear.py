"""Admissible error functions and their large-scale functionals.

An admissible function u is positive, nondecreasing, doubling and sublinear.
We work with the closed family

    u(r) = a + b * (1 + r)**theta * log(e + r)**k,   0 <= theta < 1, k >= 0,

plus pointwise maxima of members and advanced copies u_p(t) = u(p + t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

UPARROW_RMAX = 1e6
_BISECT_RTOL = 1e-9


class InvalidAdmissible(ValueError):
    pass


def _as_array(r):
    return np.asarray(r, dtype=float)


class AdmissibleFunction:
    """Base class. Subclasses implement `_eval` on float arrays."""

    def __call__(self, r):
        return self.evaluate(r)

    def evaluate(self, r):
        arr = _as_array(r)
        if np.any(arr < 0):
            raise ValueError("admissible functions are defined on r >= 0")
        out = self._eval(arr)
        return float(out) if np.ndim(out) == 0 else out

    def _eval(self, r):
        raise NotImplementedError

    # growth exponent pair used to decide the dominating term at infinity
    def growth(self):
        raise NotImplementedError

    def tail_ratio(self, tau):
        """lim_{r->inf} u(tau r)/u(r)."""
        theta, _ = self.growth()
        return tau ** theta

    def r_epsilon(self, eps):
        return r_epsilon(self, eps)

    def uparrow(self, tau):
        return uparrow(self, tau)

    def advance(self, p):
        return advance(self, p)

    def to_dict(self):
        raise NotImplementedError

    def check_invariants(self, r_max=1e9, n=400):
        """Numerically assert u >= 1, monotone, doubling and sublinear on a log grid."""
        r = np.concatenate([[0.0], np.logspace(-3, math.log10(r_max), n)])
        u = self._eval(r)
        if np.any(u < 1 - 1e-12):
            raise InvalidAdmissible("u(r) < 1 somewhere")
        if np.any(np.diff(u) < -1e-9 * np.abs(u[1:])):
            raise InvalidAdmissible("u is not nondecreasing")
        dbl = self._eval(2 * r) / u
        if not np.all(np.isfinite(dbl)):
            raise InvalidAdmissible("doubling ratio is not finite")
        # sublinearity: log(u(r)/r) must fall with a visible slope over the top decades
        tail = r[-50:]
        q = self._eval(tail) / tail
        slope = math.log(q[-1] / q[0]) / math.log(tail[-1] / tail[0])
        if not slope < -1e-3:
            raise InvalidAdmissible("u does not look sublinear")
        return True


@dataclass(frozen=True)
class Constant(AdmissibleFunction):
    a: float = 1.0

    def __post_init__(self):
        if not self.a >= 1:
            raise InvalidAdmissible(f"Constant({self.a}) must be >= 1")

    def _eval(self, r):
        return np.full(np.shape(r), float(self.a)) if np.ndim(r) else float(self.a)

    def growth(self):
        return (0.0, 0.0)

    def to_dict(self):
        return {"family": "Constant", "a": float(self.a), "b": 0.0, "theta": 0.0, "k": 0.0}


@dataclass(frozen=True)
class PowerLog(AdmissibleFunction):
    a: float = 0.0
    b: float = 1.0
    theta: float = 0.5
    k: float = 0.0

    def __post_init__(self):
        if not 0 <= self.theta < 1:
            raise InvalidAdmissible("theta must lie in [0, 1)")
        if self.k < 0 or self.b < 0:
            raise InvalidAdmissible("b and k must be nonnegative")
        if self.a + self.b < 1:
            raise InvalidAdmissible("u(0) = a + b must be >= 1")
        if self.a < 0:
            raise InvalidAdmissible("a must be nonnegative")

    def _eval(self, r):
        out = self.a + self.b * np.power(1.0 + r, self.theta) * np.power(np.log(math.e + r), self.k)
        return out

    def growth(self):
        if self.b == 0:
            return (0.0, 0.0)
        return (float(self.theta), float(self.k))

    def to_dict(self):
        return {"family": "PowerLog", "a": float(self.a), "b": float(self.b),
                "theta": float(self.theta), "k": float(self.k)}


class MaxBag(AdmissibleFunction):
    """Pointwise maximum of finitely many admissible functions, evaluated lazily."""

    def __init__(self, terms):
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, MaxBag) else [t])
        if not flat:
            raise InvalidAdmissible("empty max bag")
        self.terms = tuple(flat)

    def _eval(self, r):
        out = self.terms[0]._eval(r)
        for t in self.terms[1:]:
            out = np.maximum(out, t._eval(r))
        return out

    def growth(self):
        return max(t.growth() for t in self.terms)

    def to_dict(self):
        return {"family": "Max", "terms": [t.to_dict() for t in self.terms]}

    def __eq__(self, other):
        return isinstance(other, MaxBag) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __repr__(self):
        return f"MaxBag({list(self.terms)!r})"


class Advanced(AdmissibleFunction):
    """u_p(t) = u(p + t)."""

    def __init__(self, base, p):
        if p < 0:
            raise ValueError("advance needs p >= 0")
        self.base = base
        self.p = float(p)

    def _eval(self, r):
        return self.base._eval(self.p + r)

    def growth(self):
        return self.base.growth()

    def to_dict(self):
        return {"family": "Advanced", "p": self.p, "base": self.base.to_dict()}

    def __repr__(self):
        return f"Advanced({self.base!r}, p={self.p})"


class Scaled(AdmissibleFunction):
    """c * u for c >= 1 (keeps u >= 1)."""

    def __init__(self, base, c):
        if c < 1:
            raise InvalidAdmissible("scaling factor must be >= 1")
        self.base = base
        self.c = float(c)

    def _eval(self, r):
        return self.c * self.base._eval(r)

    def growth(self):
        return self.base.growth()

    def to_dict(self):
        return {"family": "Scaled", "c": self.c, "base": self.base.to_dict()}


class SumBag(AdmissibleFunction):
    """Pointwise sum of finitely many admissible functions."""

    def __init__(self, terms):
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, SumBag) else [t])
        if not flat:
            raise InvalidAdmissible("empty sum bag")
        self.terms = tuple(flat)

    def _eval(self, r):
        out = self.terms[0]._eval(r)
        for t in self.terms[1:]:
            out = out + t._eval(r)
        return out

    def growth(self):
        return max(t.growth() for t in self.terms)

    def to_dict(self):
        return {"family": "Sum", "terms": [t.to_dict() for t in self.terms]}

    def __repr__(self):
        return f"SumBag({list(self.terms)!r})"


def combine_max(*fs):
    return MaxBag(fs)


def combine_sum(*fs):
    return SumBag(fs)


def advance(u, p):
    if p == 0:
        return u
    return Advanced(u, p)


def from_dict(d):
    fam = d["family"]
    if fam == "Constant":
        return Constant(d["a"])
    if fam == "PowerLog":
        return PowerLog(d["a"], d["b"], d["theta"], d["k"])
    if fam == "Max":
        return MaxBag([from_dict(t) for t in d["terms"]])
    if fam == "Sum":
        return SumBag([from_dict(t) for t in d["terms"]])
    if fam == "Advanced":
        return Advanced(from_dict(d["base"]), d["p"])
    if fam == "Scaled":
        return Scaled(from_dict(d["base"]), d["c"])
    raise InvalidAdmissible(f"unknown family {fam!r}")


def r_epsilon(u, eps):
    """sup{r >= 0 : u(r) > eps r}.

    Since u >= 1 the set contains [0, 1/eps), so the result is at least 1/eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(u, Constant):
        return u.a / eps
    f = lambda r: u._eval(np.asarray(r, dtype=float)) - eps * np.asarray(r, dtype=float)
    lo = 1.0 / eps
    # push hi out until u(r) <= eps r holds over 40 consecutive doublings
    hi = lo
    run = 0
    last_bad = lo
    while run < 40:
        hi *= 2.0
        if f(hi) > 0:
            last_bad = hi
            run = 0
        else:
            run += 1
        if hi > 1e300:
            raise ArithmeticError("r_epsilon did not terminate; u is not sublinear")
    # fine log grid on [lo, 2*last_bad] to locate the last crossing
    grid = np.geomspace(lo, 2.0 * last_bad, 4000)
    vals = f(grid)
    bad = np.nonzero(vals > 0)[0]
    if bad.size == 0:
        a = lo
        b = grid[1]
        if f(lo) <= 0:
            # u(lo) = eps lo exactly when u(lo) = 1; the sup is lo
            return lo
    else:
        i = bad[-1]
        if i == grid.size - 1:
            raise ArithmeticError("r_epsilon bracket failed")
        a, b = grid[i], grid[i + 1]
    while b - a > _BISECT_RTOL * b:
        m = 0.5 * (a + b)
        if f(m) > 0:
            a = m
        else:
            b = m
    return float(0.5 * (a + b))


def uparrow(u, tau, r_max=UPARROW_RMAX):
    """sup_r u(tau r)/u(r): max of the tail limit and a numeric maximization on [0, r_max]."""
    if tau <= 1:
        raise ValueError("tau must exceed 1")
    if isinstance(u, Constant) or u.growth() == (0.0, 0.0) and isinstance(u, PowerLog):
        return 1.0
    grid = np.concatenate([[0.0], np.geomspace(1e-6, r_max, 3000)])
    ratio = u._eval(tau * grid) / u._eval(grid)
    i = int(np.argmax(ratio))
    best = float(ratio[i])
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda r: -float(u._eval(np.float64(tau * r)) / u._eval(np.float64(r))),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * max(hi, 1.0)})
        best = max(best, -float(res.fun))
    return max(best, float(u.tail_ratio(tau)), 1.0)


def sup_level(u, c, r_cap=1e300):
    """sup{r >= 0 : u(r) <= c}; 0 when u(0) > c, inf when u stays bounded by c."""
    if u._eval(np.float64(0.0)) > c:
        return 0.0
    if isinstance(u, Constant):
        return math.inf
    if u.growth() == (0.0, 0.0):
        # bounded representative: compare with its supremum at infinity
        if u._eval(np.float64(r_cap)) <= c:
            return math.inf
    hi = 1.0
    while u._eval(np.float64(hi)) <= c:
        hi *= 2.0
        if hi > r_cap:
            return math.inf
    lo = 0.0
    while hi - lo > _BISECT_RTOL * max(hi, 1.0):
        m = 0.5 * (lo + hi)
        if u._eval(np.float64(m)) <= c:
            lo = m
        else:
            hi = m
    return float(lo)


def is_log_class(u, theta_tol=0.05):
    """True when the dominating term is a pure log power (theta ~ 0, k >= 1)."""
    theta, k = u.growth()
    return theta < theta_tol and k >= 1
