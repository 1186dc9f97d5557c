"""Heintze group specifications, homogeneous quasimetrics and dimension invariants.

N is either abelian R^k or a Heisenberg group H_m, and S = N x| R acts on N by
dilations delta_s = exp(s alpha). The homogeneous quasimetric satisfies
rho(delta_s x, delta_s y) = e^s rho(x, y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.stats import qmc


class HeintzeError(ValueError):
    pass


class NonPositiveEigenvalue(HeintzeError):
    pass


class NotNormalized(HeintzeError):
    pass


class InsufficientScales(HeintzeError):
    pass


class DirectionNotUnitEigenvector(HeintzeError):
    pass


class InvalidId(HeintzeError):
    pass


@dataclass(frozen=True)
class HeintzeSpec:
    """Purely real derivation on an abelian or Heisenberg Lie algebra.

    For "abelian", `blocks` lists (eigenvalue, jordan_size) pairs.
    For "heisenberg" with m = `dim_param`, `blocks` holds the diagonal entries
    (a_1..a_m, b_1..b_m, c) in the basis (x_1..x_m, y_1..y_m, z), and the
    bracket [x_i, y_i] = z forces a_i + b_i = c.
    """

    n_type: str
    dim_param: int
    blocks: tuple
    normalized: bool = False

    def __post_init__(self):
        if self.n_type not in ("abelian", "heisenberg"):
            raise HeintzeError(f"unknown nilpotent type {self.n_type!r}")
        eig = [lam for lam, _ in self.blocks]
        if any(not lam > 0 for lam in eig):
            raise NonPositiveEigenvalue("derivation eigenvalues must be positive")
        if self.n_type == "abelian":
            if sum(s for _, s in self.blocks) != self.dim_param:
                raise HeintzeError("block sizes must add up to the abelian dimension")
        else:
            m = self.dim_param
            if len(self.blocks) != 2 * m + 1 or any(s != 1 for _, s in self.blocks):
                raise HeintzeError("heisenberg derivation needs 2m+1 diagonal entries")
            c = self.blocks[-1][0]
            for i in range(m):
                if abs(self.blocks[i][0] + self.blocks[m + i][0] - c) > 1e-12 * c:
                    raise HeintzeError("heisenberg grading must satisfy a_i + b_i = c")
        if self.normalized and abs(min(eig) - 1.0) > 1e-12:
            raise NotNormalized("normalized flag set but min eigenvalue != 1")

    # -- constructors --------------------------------------------------
    @classmethod
    def abelian(cls, eigenvalues, jordan=None):
        if jordan is None:
            jordan = [1] * len(eigenvalues)
        blocks = tuple((float(l), int(s)) for l, s in zip(eigenvalues, jordan))
        spec = cls("abelian", sum(s for _, s in blocks), blocks)
        return replace(spec, normalized=abs(min(eigenvalues) - 1) < 1e-12)

    @classmethod
    def heisenberg(cls, m=1, a=None, b=None):
        a = [1.0] * m if a is None else [float(x) for x in a]
        b = [1.0] * m if b is None else [float(x) for x in b]
        c = a[0] + b[0]
        blocks = tuple((x, 1) for x in a + b + [c])
        spec = cls("heisenberg", m, blocks)
        return replace(spec, normalized=abs(min(x for x, _ in blocks) - 1) < 1e-12)

    # -- structure -----------------------------------------------------
    @property
    def dim(self):
        return self.dim_param if self.n_type == "abelian" else 2 * self.dim_param + 1

    @property
    def eigenvalues(self):
        out = []
        for lam, s in self.blocks:
            out.extend([lam] * s)
        return np.array(out)

    @property
    def is_diagonal(self):
        return all(s == 1 for _, s in self.blocks)

    def alpha_matrix(self):
        d = self.dim
        A = np.zeros((d, d))
        i = 0
        for lam, s in self.blocks:
            for j in range(s):
                A[i + j, i + j] = lam
                if j + 1 < s:
                    A[i + j, i + j + 1] = 1.0
            i += s
        return A

    def to_dict(self):
        return {"n_type": self.n_type, "dim_param": self.dim_param,
                "blocks": [list(b) for b in self.blocks], "normalized": self.normalized}

    @classmethod
    def from_dict(cls, d):
        return cls(d["n_type"], int(d["dim_param"]),
                   tuple((float(l), int(s)) for l, s in d["blocks"]), bool(d.get("normalized", False)))

    # -- group law -----------------------------------------------------
    def mul(self, g, h):
        g = np.asarray(g, float)
        h = np.asarray(h, float)
        if self.n_type == "abelian":
            return g + h
        m = self.dim_param
        out = g + h
        omega = np.sum(g[..., :m] * h[..., m:2 * m] - g[..., m:2 * m] * h[..., :m], axis=-1)
        out[..., -1] += 0.5 * omega
        return out

    def inv(self, g):
        # heisenberg inverse is -g as omega(g, g) = 0
        return -np.asarray(g, float)

    def dilate(self, n, s):
        """delta_s = exp(s alpha) applied to N-coordinates (last axis)."""
        n = np.asarray(n, float)
        s = np.asarray(s, float)
        if self.is_diagonal:
            return n * np.exp(np.multiply.outer(s, self.eigenvalues)) if s.ndim else n * np.exp(s * self.eigenvalues)
        return _expm_apply(self, s, n)

    # -- quasimetric ---------------------------------------------------
    def quasinorm(self, n):
        n = np.asarray(n, float)
        if self.n_type == "heisenberg":
            m = self.dim_param
            lam = self.eigenvalues
            v = n[..., :2 * m]
            z = n[..., -1]
            hv = np.sum(np.abs(v) ** (2.0 / lam[:2 * m]), axis=-1)
            return (hv ** 2 + np.abs(z) ** (4.0 / lam[-1])) ** 0.25
        if self.is_diagonal:
            return np.max(np.abs(n) ** (1.0 / self.eigenvalues), axis=-1)
        return _implicit_gauge(self, n)

    def quasimetric(self, n1, n2):
        return self.quasinorm(self.mul(self.inv(n1), n2))

    def box_halfwidths(self, rho):
        """Half-widths of a coordinate box containing the quasiball of radius rho at 0."""
        lam = self.eigenvalues
        if self.is_diagonal or self.n_type == "heisenberg":
            return rho ** lam
        E = _expm_matrix(self, math.log(rho))
        m = np.max(np.abs(E), axis=0)
        return m * np.linalg.norm(E / m, axis=0)


def _block_exp_apply(lam, size, t, nb):
    # exp(t J) nb for an upper Jordan block; t has shape (...,), nb (..., size)
    out = np.zeros_like(nb)
    fact = 1.0
    for j in range(size):
        if j > 0:
            fact *= j
        coef = (t ** j / fact)[..., None] if np.ndim(t) else t ** j / fact
        out[..., : size - j] += coef * nb[..., j:]
    e = np.exp(lam * t)
    return out * (e[..., None] if np.ndim(t) else e)


def _expm_apply(spec, t, n):
    n = np.asarray(n, float)
    t = np.asarray(t, float)
    out = np.empty(np.broadcast_shapes(n.shape, t.shape + (spec.dim,)))
    i = 0
    for lam, s in spec.blocks:
        out[..., i:i + s] = _block_exp_apply(lam, s, t, np.broadcast_to(n[..., i:i + s], out[..., i:i + s].shape))
        i += s
    return out


def _expm_apply_scaled(spec, t, x):
    """exp(t alpha) x as (y, c) with exp(t alpha) x = e^c y and max block norm of y equal to 1.

    Keeps the exponential factors in log form so that large |t| neither
    overflows nor underflows.
    """
    parts, logs = [], []
    i = 0
    for lam, size in spec.blocks:
        poly = _block_exp_apply(0.0, size, t, x[..., i:i + size])
        nrm = np.linalg.norm(poly, axis=-1)
        with np.errstate(divide="ignore"):
            logs.append(lam * t + np.log(nrm))
        parts.append(poly)
        i += size
    L = np.stack(logs, axis=-1)
    c = np.max(L, axis=-1)
    y = np.concatenate([p * np.exp(lam * t - c)[..., None] for p, (lam, _) in zip(parts, spec.blocks)],
                       axis=-1)
    return y, c


def _expm_matrix(spec, t):
    return _expm_apply(spec, np.full(spec.dim, t), np.eye(spec.dim))


def _implicit_gauge(spec, n):
    """rho(n) = e^t with |exp(-t alpha) n| = 1.

    g(t) = log|exp(-t alpha) n| is strictly decreasing with slope in
    [-|alpha|, -lambda_min(sym alpha)], so a safeguarded Newton iteration
    converges to machine precision in a handful of steps.
    """
    A = spec.alpha_matrix()
    S = 0.5 * (A + A.T)
    smin = np.linalg.eigvalsh(S).min()
    if smin <= 0:
        raise HeintzeError("implicit gauge needs a positive definite symmetric part")
    smax = np.linalg.norm(A, 2)
    n = np.asarray(n, float)
    flat = n.reshape(-1, spec.dim)
    big = np.max(np.abs(flat), axis=1)
    out = np.zeros(flat.shape[0])
    live = big > 0
    if not np.any(live):
        return out.reshape(n.shape[:-1])
    # work with unit vectors so that huge coordinates cannot overflow |x|^2
    x = flat[live] / big[live, None]
    nx = np.linalg.norm(x, axis=1)
    x = x / nx[:, None]
    ln = np.log(big[live]) + np.log(nx)
    # g(0) = ln and slope bounds give a guaranteed bracket
    lo = np.minimum(ln / smax, ln / smin)
    hi = np.maximum(ln / smax, ln / smin)
    t = 0.5 * (lo + hi)
    act = np.arange(x.shape[0])
    for _ in range(100):
        xa, ta = x[act], t[act]
        y, ls = _expm_apply_scaled(spec, -ta, xa)
        yy = np.sum(y * y, axis=1)
        g = ln[act] + ls + 0.5 * np.log(yy)
        dg = -np.sum(y * (y @ S.T), axis=1) / yy
        la = np.where(g > 0, ta, lo[act])
        ha = np.where(g > 0, hi[act], ta)
        step = ta - g / dg
        inside = (step >= la) & (step <= ha)
        t_new = np.where(g == 0, ta, np.where(inside, step, 0.5 * (la + ha)))
        done = (np.abs(t_new - ta) <= 1e-15 * np.maximum(1.0, np.abs(ta))) | (g == 0)
        t[act], lo[act], hi[act] = t_new, la, ha
        act = act[~done]
        if act.size == 0:
            break
    out[live] = np.exp(t)
    return out.reshape(n.shape[:-1])


def normalize(spec):
    eig = [lam for lam, _ in spec.blocks]
    if any(not lam > 0 for lam in eig):
        raise NonPositiveEigenvalue("derivation eigenvalues must be positive")
    lo = min(eig)
    blocks = tuple((lam / lo, s) for lam, s in spec.blocks)
    return HeintzeSpec(spec.n_type, spec.dim_param, blocks, normalized=True)


def homogeneous_dimension(spec):
    if not spec.normalized:
        raise NotNormalized("normalize the derivation first")
    return float(spec.eigenvalues.sum())


def is_carnot_type(spec):
    if not spec.normalized:
        raise NotNormalized("normalize the derivation first")
    if spec.n_type == "abelian":
        return all(abs(lam - 1) < 1e-12 and s == 1 for lam, s in spec.blocks)
    m = spec.dim_param
    return all(abs(lam - 1) < 1e-12 for lam, _ in spec.blocks[:2 * m])


def homogeneous_quasimetric(spec, n1, n2):
    if not spec.normalized:
        raise NotNormalized("normalize the derivation first")
    return spec.quasimetric(n1, n2)


def ultrametric_constant(spec, n_triples=2000, seed=0, scale=1.0):
    """Empirical max rho(x,z) / max(rho(x,y), rho(y,z)) over random triples."""
    rng = np.random.Generator(np.random.Philox(seed))
    P = rng.normal(scale=scale, size=(3, n_triples, spec.dim))
    xz = spec.quasimetric(P[0], P[2])
    xy = spec.quasimetric(P[0], P[1])
    yz = spec.quasimetric(P[1], P[2])
    return float(np.max(xz / np.maximum(xy, yz)))


# -- box counting ------------------------------------------------------

EUCLIDEAN_PLANE = "euclidean"


def _in_region(spec, region, X):
    if region == "unit_ball":
        return spec.quasinorm(X) <= 1.0
    if region == "unit_cube":
        return np.all((X >= 0) & (X < 1), axis=-1)
    raise HeintzeError(f"unknown region {region!r}")


def _region_sample(spec, region, n_points, seed):
    d = spec.dim
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    if region == "unit_cube":
        return sob.random_base2(int(math.ceil(math.log2(max(n_points, 2)))))[:n_points]
    if region != "unit_ball":
        raise HeintzeError(f"unknown region {region!r}")
    # rejection from the bounding box of the unit quasiball
    hw = spec.box_halfwidths(1.0)
    frac = max(float(_in_region(spec, region, (2 * sob.random(4096) - 1) * hw).mean()), 1e-3)
    sob.reset()
    m = int(math.ceil(math.log2(n_points / frac * 1.1)))
    X = (2 * sob.random_base2(m) - 1) * hw
    X = X[_in_region(spec, region, X)]
    return X[:n_points]


def _cell_keys(spec, X, eps):
    """Integer cell index and cell anchor (corner) of every sample point."""
    lam = spec.eigenvalues
    if spec.n_type == "heisenberg":
        m = spec.dim_param
        side = eps ** lam
        iv = np.floor(X[:, :2 * m] / side[:2 * m])
        corner = iv * side[:2 * m]
        # left-translate by the cell corner so cells are group-adapted boxes
        zrel = X[:, -1] - 0.5 * np.sum(corner[:, :m] * X[:, m:2 * m] - corner[:, m:] * X[:, :m], axis=1)
        iz = np.floor(zrel / side[-1])
        keys = np.column_stack([iv, iz])
        anchor = np.column_stack([corner, iz * side[-1]])
    elif spec.is_diagonal:
        keys = np.floor(X / eps ** lam)
        anchor = keys * eps ** lam
    else:
        keys = np.floor(_expm_apply(spec, -math.log(eps), X))
        anchor = _expm_apply(spec, math.log(eps), keys)
    return keys.astype(np.int64), anchor


def _cell_count(spec, X, eps, region):
    """Occupied cells whose anchor lies in the region.

    Anchoring avoids the overcount of cells that only graze the boundary.
    """
    keys, anchor = _cell_keys(spec, X, eps)
    keys = keys[_in_region(spec, region, anchor)]
    if keys.shape[0] == 0:
        return 0
    keys = keys - keys.min(axis=0)
    span = keys.max(axis=0) + 1
    flat = np.zeros(keys.shape[0], dtype=np.int64)
    for j in range(keys.shape[1]):
        flat = flat * int(span[j]) + keys[:, j]
    return int(np.unique(flat).size)


def box_counting_dimension(spec_or_metric, region="unit_cube", scales=None, seed=0, n_points=10 ** 6):
    """Occupied-box regression of log N(eps) on log(1/eps).

    Returns (estimate, stderr). The two extreme scales are dropped before fitting.
    """
    spec = HeintzeSpec.abelian([1.0, 1.0]) if spec_or_metric == EUCLIDEAN_PLANE else spec_or_metric
    if scales is None:
        p = float(spec.eigenvalues.sum())
        # keep the finest box count well under the sample size
        finest = (n_points / 30.0) ** (-1.0 / p)
        if region == "unit_cube":
            # reciprocal integers keep the cube a union of whole cells
            scales = 1.0 / np.unique(np.round(np.geomspace(2, 1.0 / finest, 7)))
        else:
            scales = np.geomspace(0.5, finest, 8)
    scales = np.asarray(scales, float)
    if scales.size < 4:
        raise InsufficientScales("box counting needs at least 4 scales")
    X = _region_sample(spec, region, n_points, seed)
    counts = np.array([_cell_count(spec, X, e, region) for e in scales])
    order = np.argsort(scales)
    s = scales[order][1:-1]
    c = counts[order][1:-1]
    fit = stats.linregress(np.log(1.0 / s), np.log(c))
    return float(fit.slope), float(fit.stderr)


# -- line counting (abelian) ---------------------------------------------

def line_count_scaling(spec, direction, ball_radii, n_samples=2 ** 18, seed=0):
    """Transversal measure of lines parallel to `direction` that meet quasiballs B(0, r).

    Returns (fitted_exponent, expected, measures) where the fit is of
    log(transversal measure) against log(ball volume).
    """
    if spec.n_type != "abelian":
        raise HeintzeError("line counting is implemented for abelian N")
    if not spec.normalized:
        raise NotNormalized("normalize the derivation first")
    e = np.asarray(direction, float)
    e = e / np.linalg.norm(e)
    A = spec.alpha_matrix()
    if np.linalg.norm(A @ e - e) > 1e-9:
        raise DirectionNotUnitEigenvector("direction must be an eigenvector of eigenvalue 1")
    d = spec.dim
    p = float(spec.eigenvalues.sum())
    # orthonormal transversal basis
    Q, _ = np.linalg.qr(np.column_stack([e, np.eye(d)]))
    T = Q[:, 1:d]
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    U = sob.random(n_samples)
    Ut = U[:, : d - 1]
    trans, vols = [], []
    for r in ball_radii:
        if r <= 0:
            trans.append(0.0)
            vols.append(0.0)
            continue
        hw = spec.box_halfwidths(r)
        R = float(np.linalg.norm(hw))
        # transversal sample box [-R, R]^(d-1)
        Y = (2 * Ut - 1) * R @ T.T
        hit = _line_meets_ball(spec, Y, e, r)
        trans.append(hit.mean() * (2 * R) ** (d - 1))
        Xb = (2 * U - 1) * hw
        vols.append((spec.quasinorm(Xb) <= r).mean() * np.prod(2 * hw))
    trans = np.array(trans)
    vols = np.array(vols)
    ok = (trans > 0) & (vols > 0)
    if ok.sum() < 2:
        return 0.0, (p - 1) / p, trans
    fit = stats.linregress(np.log(vols[ok]), np.log(trans[ok]))
    return float(fit.slope), (p - 1) / p, trans


def _line_meets_ball(spec, Y, e, r):
    t = math.log(r)
    if spec.is_diagonal:
        # the line can zero the e-component; other coordinates are fixed
        lam = spec.eigenvalues
        mask = np.abs(e) < 0.5
        return np.all(np.abs(Y[:, mask]) <= r ** lam[mask], axis=1)
    # implicit gauge: B(0, r) = exp(t alpha) (Euclidean unit ball)
    AY = _expm_apply(spec, -t, Y)
    Ae = _expm_apply(spec, -t, e)
    Ae = Ae / np.linalg.norm(Ae)
    perp = AY - np.outer(AY @ Ae, Ae)
    return np.linalg.norm(perp, axis=1) <= 1.0


# -- symmetric spaces ---------------------------------------------------

_DIM_R = {"R": 1, "C": 2, "H": 4, "O": 8}


@dataclass(frozen=True)
class SymmetricSpaceId:
    K: str
    n: int

    def __post_init__(self):
        if self.K not in _DIM_R:
            raise InvalidId(f"unknown division algebra {self.K!r}")
        if self.n < 2:
            raise InvalidId("rank parameter n must be >= 2")
        if self.K == "O" and self.n != 2:
            raise InvalidId("the octonionic hyperbolic space exists only for n = 2")

    def __str__(self):
        return f"{self.K}H^{self.n}"


@dataclass(frozen=True)
class InvariantRecord:
    dim_X: int
    dim_boundary: int
    p: int
    dim_Im_K: int

    def as_tuple(self):
        return (self.dim_X, self.dim_boundary, self.p, self.dim_Im_K)


def symmetric_space_invariants(sid):
    if not isinstance(sid, SymmetricSpaceId):
        sid = SymmetricSpaceId(*sid)
    dk = _DIM_R[sid.K]
    dim_X = sid.n * dk
    im = dk - 1
    return InvariantRecord(dim_X, dim_X - 1, dim_X - 1 + im, im)


def heintze_spec_for(sid):
    """Normalized Heintze derivation of the boundary nilpotent group of K H^n.

    N has a layer n1 = K^(n-1) with eigenvalue 1 and a centre n2 = Im K with
    eigenvalue 2. Only the abelian (K = R) and Heisenberg (K = C) cases are
    representable by HeintzeSpec; other algebras return None.
    """
    sid = sid if isinstance(sid, SymmetricSpaceId) else SymmetricSpaceId(*sid)
    if sid.K == "R":
        return HeintzeSpec.abelian([1.0] * (sid.n - 1))
    if sid.K == "C":
        return HeintzeSpec.heisenberg(sid.n - 1)
    return None


@dataclass(frozen=True)
class Verdict:
    kind: str
    invariant: str | None = None

    def __str__(self):
        return self.kind if self.invariant is None else f"{self.kind}({self.invariant})"


HOMOTHETIC = Verdict("Homothetic")


def sbe_distinguishable(id1, id2):
    a = id1 if isinstance(id1, SymmetricSpaceId) else SymmetricSpaceId(*id1)
    b = id2 if isinstance(id2, SymmetricSpaceId) else SymmetricSpaceId(*id2)
    if a == b:
        return HOMOTHETIC
    ra, rb = symmetric_space_invariants(a), symmetric_space_invariants(b)
    if ra.dim_boundary != rb.dim_boundary:
        return Verdict("DistinguishedBy", "topdim")
    if ra.p != rb.p:
        return Verdict("DistinguishedBy", "p")
    # unreachable for valid ids: equal dim X and p pin down K and then n
    raise AssertionError(f"{a} and {b} share all invariants")


def all_ids(max_dim=32):
    out = []
    for K, dk in _DIM_R.items():
        for n in range(2, max_dim // dk + 1):
            if K == "O" and n != 2:
                continue
            out.append(SymmetricSpaceId(K, n))
    return out


def classification_table(max_dim=32):
    ids = all_ids(max_dim)
    records = {str(i): symmetric_space_invariants(i) for i in ids}
    verdicts = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            verdicts.append((str(a), str(b), str(sbe_distinguishable(a, b))))
    return records, verdicts
