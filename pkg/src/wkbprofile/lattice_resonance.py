"""Boundary frequency lattice: directions, lifted modes, glancing distances,
small divisors, resonance enumeration, interaction coefficients and the
resonant/non-resonant partition."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Iterator

import numpy as np
from scipy.optimize import brentq

from .boundary_spectral import StableDecomposition, decompose_stable
from .char_variety import eigen_structure, group_velocity, sphere_points
from .errors import (
    DefectiveElliptic,
    GlancingFrequency,
    GlancingOnLattice,
    NullProjectedPolarization,
    PartitionClosureViolation,
    ZeroVector,
)
from .system_model import LinearizedSystem, apply_L1_tilde

RES_TOL = 1e-9
XI_PREFILTER = 1e-6
EXACT_GLANCING_REL = 1e-10
NULL_POLARIZATION_TOL = 1e-12

CSV_COLUMNS = ["lp", "lq", "lr", "np", "xp", "nq", "xq", "nr", "xr",
               "gamma_pq_re", "gamma_pq_im", "gamma_pr_re", "gamma_pr_im", "type", "residual"]


# ----------------------------------------------------------------------------
# lattice directions and lifted modes

@dataclass(frozen=True)
class LatticeDirection:
    n0: tuple[int, ...]
    zeta: np.ndarray


@dataclass(frozen=True)
class ModeKey:
    n0: tuple[int, ...]
    root_index: int
    xi0: float
    branch: int
    cls: str
    E: np.ndarray
    pitildeE: np.ndarray
    pitilde: np.ndarray
    dxitau: float
    grad: np.ndarray
    zeta: np.ndarray

    @property
    def key(self) -> tuple[tuple[int, ...], int]:
        return (self.n0, self.root_index)

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([self.zeta, [self.xi0]])


@dataclass(frozen=True)
class LiftResult:
    direction: LatticeDirection
    modes: list[ModeKey]
    elliptic: list[complex]
    dec: StableDecomposition


def _gcd(values: Iterable[int]) -> int:
    return reduce(math.gcd, (abs(int(v)) for v in values), 0)


def normalize_direction(n: Iterable[int]) -> tuple[tuple[int, ...], int]:
    """Write n = lambda * n0 with n0 coprime and its first nonzero entry positive."""
    n = tuple(int(v) for v in n)
    g = _gcd(n)
    if g == 0:
        raise ZeroVector("lattice vector must be nonzero")
    first = next(v for v in n if v != 0)
    lam = g if first > 0 else -g
    return tuple(v // lam for v in n), lam


def is_canonical(n: tuple[int, ...]) -> bool:
    if _gcd(n) != 1:
        return False
    return next(v for v in n if v != 0) > 0


def box_directions(m: int, radius: int) -> list[tuple[int, ...]]:
    """Canonical directions with max-norm at most ``radius`` in lexicographic order."""
    out = []
    for n in itertools.product(range(-radius, radius + 1), repeat=m):
        if any(n) and is_canonical(n):
            out.append(tuple(n))
    return out


def lattice_point(lin: LinearizedSystem, n: Iterable[int]) -> np.ndarray:
    return np.asarray(tuple(n), dtype=float) @ lin.zetas


def lift_direction(lin: LinearizedSystem, n0: Iterable[int]) -> LiftResult:
    """Real roots of the normal problem at n0.zeta, tagged incoming/outgoing,
    plus the elliptic roots.  Polarizations come from the interior eigen-structure."""
    n0 = tuple(int(v) for v in n0)
    zeta = lattice_point(lin, n0)
    if not np.any(zeta):
        raise ZeroVector(f"n0.zeta vanishes for n0 = {n0}")
    try:
        dec = decompose_stable(lin, zeta)
    except (GlancingFrequency, DefectiveElliptic) as exc:
        raise GlancingOnLattice(f"direction {n0} is glancing: {exc}", n0) from exc
    modes = []
    elliptic = []
    real_roots = [r for r in dec.roots if r.cls in ("incoming", "outgoing")]
    real_roots.sort(key=lambda r: r.xi.real)
    for idx, root in enumerate(real_roots):
        xi = float(root.xi.real)
        es = eigen_structure(lin, zeta[1:], xi)
        k = root.branch
        E = es.rights[:, k].copy()
        pit = es.pis_tilde[k].copy()
        grad = group_velocity(lin, es, k)
        modes.append(ModeKey(n0, idx, xi, k, root.cls, E, pit @ E, pit, float(grad[-1]), grad, zeta))
    for root in dec.roots:
        if root.cls.startswith("elliptic"):
            elliptic.append(root.xi)
    return LiftResult(LatticeDirection(n0, zeta), modes, elliptic, dec)


class LiftCache:
    """Memoized lifts keyed by canonical direction."""

    def __init__(self, lin: LinearizedSystem):
        self.lin = lin
        self._lifts: dict[tuple[int, ...], LiftResult] = {}

    def __call__(self, n0: tuple[int, ...]) -> LiftResult:
        n0 = tuple(n0)
        if n0 not in self._lifts:
            self._lifts[n0] = lift_direction(self.lin, n0)
        return self._lifts[n0]

    def dec(self, n: Iterable[int]) -> StableDecomposition:
        """Decomposition at n.zeta for any nonzero n with positive scale, via its direction."""
        n0, lam = normalize_direction(n)
        if lam > 0:
            return self(n0).dec
        return decompose_stable(self.lin, lattice_point(self.lin, n))


# ----------------------------------------------------------------------------
# glancing set and small divisors

def glancing_rays(lin: LinearizedSystem, n_samples: int = 10_000, seed: int = 0) -> np.ndarray:
    """Unit vectors spanning the glancing cone in (tau, eta) space.

    For each sampled tangential direction and branch, the zeros of d_xi tau_k
    in xi are bracketed on a tan-parametrized grid and refined by Brent's method.
    """
    d = lin.d
    if d == 2:
        etas = np.array([[1.0], [-1.0]])
    else:
        etas = sphere_points(d - 1, max(2, int(math.sqrt(n_samples))), seed)
    n_grid = max(16, n_samples // max(1, len(etas)))
    theta = np.linspace(-np.pi / 2, np.pi / 2, n_grid + 2)[1:-1]
    rays = []
    for eta in etas:
        def dxi_all(xi: np.ndarray) -> np.ndarray:
            xi = np.atleast_1d(xi)
            mats = np.tensordot(eta, lin.A[1:d], axes=1)[None] + xi[:, None, None] * lin.Ad[None]
            vals, vecs = np.linalg.eig(mats)
            order = np.argsort(-vals.real, axis=1)
            vals = np.take_along_axis(vals.real, order, axis=1)
            vecs = np.take_along_axis(vecs.real, order[:, None, :], axis=2)
            lefts = np.linalg.inv(vecs)
            return -np.einsum("nka,ab,nbk->nk", lefts, lin.Ad, vecs)

        xis = np.tan(theta)
        f = dxi_all(xis)
        for k in range(lin.N):
            sgn = np.sign(f[:, k])
            for i in np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]:
                th = brentq(lambda t: dxi_all(np.tan(t))[0, k], theta[i], theta[i + 1], xtol=1e-15, rtol=1e-15)
                xi = math.tan(th)
                es = eigen_structure(lin, eta, xi)
                g = np.concatenate([[es.taus[k]], eta])
                rays.append(g / np.linalg.norm(g))
    if not rays:
        return np.zeros((0, d))
    return np.array(rays)


def distance_to_rays(zeta: np.ndarray, rays: np.ndarray) -> np.ndarray:
    """Distance from each row of ``zeta`` to the union of half-lines along ``rays``."""
    zeta = np.atleast_2d(zeta)
    norm = np.linalg.norm(zeta, axis=1)
    if rays.shape[0] == 0:
        return np.full(zeta.shape[0], np.inf)
    proj = zeta @ rays.T
    perp = np.sqrt(np.maximum(norm[:, None] ** 2 - proj**2, 0.0))
    dist = np.where(proj > 0, perp, norm[:, None])
    return dist.min(axis=1)


def glancing_distance(lin: LinearizedSystem, zeta: np.ndarray, mode: str = "generic",
                      n_samples: int = 10_000, rays: np.ndarray | None = None) -> float:
    zeta = np.asarray(zeta, dtype=float)
    if mode == "euler":
        from .euler2d import glancing_distance_zeta

        return glancing_distance_zeta(lin.system.meta["params"], float(zeta[0]), float(zeta[1]))
    if rays is None:
        rays = glancing_rays(lin, n_samples)
    return float(distance_to_rays(zeta, rays)[0])


def glancing_second_derivative_check(lin: LinearizedSystem, n_samples: int = 2000, h: float = 1e-4) -> dict:
    """At glancing points, d_xi^2 tau_k must not vanish; reports the smallest modulus."""
    rays = glancing_rays(lin, n_samples)
    worst = np.inf
    for ray in rays:
        tau, eta = ray[0], ray[1:]
        try:
            dec_roots = np.linalg.eigvals(lin.AdInv @ np.tensordot(ray, lin.A[:lin.d], axes=1))
        except np.linalg.LinAlgError:
            continue
        xi = float(-dec_roots[np.argmin(np.abs(dec_roots.imag))].real)
        es = eigen_structure(lin, eta, xi)
        k = int(np.argmin(np.abs(es.taus - tau)))
        gp = group_velocity(lin, eigen_structure(lin, eta, xi + h), k)[-1]
        gm = group_velocity(lin, eigen_structure(lin, eta, xi - h), k)[-1]
        worst = min(worst, abs(gp - gm) / (2 * h))
    ok = bool(np.isfinite(worst) and worst > 1e-6) if len(rays) else True
    return {"min_second_derivative": float(worst) if np.isfinite(worst) else None, "glancing_rays": int(len(rays)),
            "pass": ok}


def lattice_box(m: int, radius: int) -> np.ndarray:
    pts = np.array(list(itertools.product(range(-radius, radius + 1), repeat=m)), dtype=np.int64)
    return pts[np.any(pts != 0, axis=1)]


def small_divisor_fit(lin: LinearizedSystem, box_radius: int, rays: np.ndarray | None = None,
                      n_bins: int = 12, raise_on_glancing: bool = True) -> dict:
    """Lower-envelope fit of log dist(n.zeta, G) >= log c - a1 log|n.zeta| over the box."""
    if box_radius < 2:
        raise ValueError("box_radius must be >= 2")
    if rays is None:
        rays = glancing_rays(lin)
    pts = lattice_box(lin.m, box_radius)
    zetas = pts.astype(float) @ lin.zetas
    size = np.linalg.norm(zetas, axis=1)
    keep = size > 0
    pts, zetas, size = pts[keep], zetas[keep], size[keep]
    dist = distance_to_rays(zetas, rays)
    exact = dist <= EXACT_GLANCING_REL * size
    hits = [tuple(int(v) for v in pts[i]) for i in np.nonzero(exact)[0]]
    if hits and raise_on_glancing:
        raise GlancingOnLattice(f"exact glancing lattice point(s): {hits[:5]}", normalize_direction(hits[0])[0])
    if rays.shape[0] == 0:
        # no glancing set at all: every lattice point is infinitely far from it
        return {"c": float("inf"), "a1": 0.0, "violations": 0, "exact_glancing": [], "points": int(len(pts)),
                "box_radius": box_radius}
    ok = ~exact
    lx, ly = np.log(size[ok]), np.log(dist[ok])
    edges = np.linspace(lx.min(), lx.max() + 1e-12, n_bins + 1)
    bx, by = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (lx >= lo) & (lx < hi)
        if np.any(sel):
            j = np.argmin(np.where(sel, ly, np.inf))
            bx.append(lx[j])
            by.append(ly[j])
    if len(bx) >= 2:
        slope = float(np.polyfit(bx, by, 1)[0])
    else:
        slope = 0.0
    a1 = -slope
    c = float(np.min(dist[ok] * size[ok] ** a1)) if np.any(ok) else 0.0
    violations = int(np.sum(dist[ok] < c * size[ok] ** (-a1) * (1 - 1e-12)))
    return {"c": c, "a1": a1, "violations": violations, "exact_glancing": hits, "points": int(len(pts)),
            "box_radius": box_radius}


# ----------------------------------------------------------------------------
# interaction coefficients

def gamma_base(lin: LinearizedSystem, Ep: np.ndarray, zeta_q: np.ndarray, Eq: np.ndarray,
               pitilde_r: np.ndarray, Er: np.ndarray) -> tuple[complex, float]:
    w = pitilde_r @ Er
    ww = float(np.real(np.vdot(w, w)))
    if ww < NULL_POLARIZATION_TOL**2:
        raise NullProjectedPolarization(f"|pi_tilde E| = {math.sqrt(ww):.3e}")
    v = pitilde_r @ (apply_L1_tilde(lin, Ep, zeta_q) @ Eq)
    g = complex(np.vdot(w, v) / ww)
    nv = float(np.linalg.norm(v))
    coll = float(np.linalg.norm(v - g * w) / nv) if nv > 0 else 0.0
    return g, coll


def gamma_coefficient(lin: LinearizedSystem, p: ModeKey, lp: int, q: ModeKey, lq: int, r: ModeKey,
                      lr: int | None = None) -> tuple[complex, float]:
    """Gamma(lp (n_p, xi_p), lq (n_q, xi_q)) projected on mode r.

    E is fixed per direction, so only the q-frequency scale lq enters.
    """
    del lp, lr
    g, coll = gamma_base(lin, p.E, lq * q.zeta, q.E, r.pitilde, r.E)
    return g, coll


def gamma_batch(lin: LinearizedSystem, Ep: np.ndarray, zq: np.ndarray, Eq: np.ndarray,
                pit_r: np.ndarray, Er: np.ndarray, chunk: int = 50_000) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized gamma_base over rows."""
    n = Ep.shape[0]
    gam = np.empty(n)
    coll = np.empty(n)
    for s in range(0, n, chunk):
        sl = slice(s, s + chunk)
        T = np.einsum("iabk,rk->riab", lin.dAtilde, Ep[sl])
        Mq = np.einsum("ri,riab->rab", zq[sl], T)
        v = np.einsum("rab,rbc,rc->ra", pit_r[sl], Mq, Eq[sl])
        w = np.einsum("rab,rb->ra", pit_r[sl], Er[sl])
        ww = np.einsum("ra,ra->r", w, w)
        if np.any(ww < NULL_POLARIZATION_TOL**2):
            raise NullProjectedPolarization("projected polarization vanishes on a resonant mode")
        g = np.einsum("ra,ra->r", w, v) / ww
        nv = np.linalg.norm(v, axis=1)
        res = np.linalg.norm(v - g[:, None] * w, axis=1)
        gam[sl] = g
        coll[sl] = np.where(nv > 0, res / np.where(nv > 0, nv, 1.0), 0.0)
    return gam, coll


def self_gamma(lin: LinearizedSystem, mode: ModeKey) -> complex:
    return gamma_base(lin, mode.E, mode.zeta, mode.E, mode.pitilde, mode.E)[0]


# ----------------------------------------------------------------------------
# resonance enumeration

@dataclass(frozen=True)
class Resonance:
    lp: int
    lq: int
    lr: int
    p: ModeKey
    q: ModeKey
    r: ModeKey
    gamma_pq: complex
    gamma_pr: complex
    rtype: str
    residual: float
    collinearity: float = 0.0
    exact: bool = False

    @property
    def defect(self) -> float:
        """|Gamma_pq + Gamma_pr| / |(lp n_p, lp xi_p)|."""
        return abs(self.gamma_pq + self.gamma_pr) / alpha_norm(self.lp, self.p)


def alpha_norm(lam: int, mode: ModeKey) -> float:
    v = np.concatenate([lam * np.asarray(mode.n0, float), [lam * mode.xi0]])
    return float(np.linalg.norm(v))


@dataclass
class ResonanceTable:
    modes: list[ModeKey]
    lp: np.ndarray
    lq: np.ndarray
    lr: np.ndarray
    ip: np.ndarray
    iq: np.ndarray
    ir: np.ndarray
    residual: np.ndarray
    gamma_pq: np.ndarray
    gamma_pr: np.ndarray
    collinearity: np.ndarray
    is_self: np.ndarray
    exact: np.ndarray
    box_radius: int
    harmonic_bound: int
    res_tol: float
    C0: float | None = None
    near_misses: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.lp.size)

    @property
    def defect(self) -> np.ndarray:
        n = np.array([m.n0 for m in self.modes], float)
        xi = np.array([m.xi0 for m in self.modes])
        norm = np.sqrt(np.sum(n[self.ip] ** 2, axis=1) + xi[self.ip] ** 2) * np.abs(self.lp)
        return np.abs(self.gamma_pq + self.gamma_pr) / norm

    def types(self, C0: float | None = None) -> np.ndarray:
        C0 = self.C0 if C0 is None else C0
        out = np.where(self.defect <= C0, "1", "2").astype(object)
        out[self.is_self] = "self"
        return out

    def row(self, i: int, C0: float | None = None) -> Resonance:
        C0 = self.C0 if C0 is None else C0
        rtype = "self" if self.is_self[i] else ("1" if self.defect[i] <= C0 else "2")
        return Resonance(int(self.lp[i]), int(self.lq[i]), int(self.lr[i]), self.modes[self.ip[i]],
                         self.modes[self.iq[i]], self.modes[self.ir[i]], complex(self.gamma_pq[i]),
                         complex(self.gamma_pr[i]), rtype, float(self.residual[i]), float(self.collinearity[i]),
                         bool(self.exact[i]))

    def __iter__(self) -> Iterator[Resonance]:
        defect = self.defect
        for i in range(len(self)):
            rtype = "self" if self.is_self[i] else ("1" if defect[i] <= self.C0 else "2")
            yield Resonance(int(self.lp[i]), int(self.lq[i]), int(self.lr[i]), self.modes[self.ip[i]],
                            self.modes[self.iq[i]], self.modes[self.ir[i]], complex(self.gamma_pq[i]),
                            complex(self.gamma_pr[i]), rtype, float(self.residual[i]),
                            float(self.collinearity[i]), bool(self.exact[i]))

    def non_self(self) -> np.ndarray:
        return np.nonzero(~self.is_self)[0]

    def triples(self, which: np.ndarray | None = None) -> set[tuple]:
        idx = range(len(self)) if which is None else which
        return {(self.modes[self.ip[i]].key, int(self.lp[i]), self.modes[self.iq[i]].key, int(self.lq[i]),
                 self.modes[self.ir[i]].key, int(self.lr[i])) for i in idx}


def linear_branches(lin: LinearizedSystem, n_samples: int = 16, seed: int = 0, tol: float = 1e-12) -> list[int]:
    """Branches tau_k that are linear in (eta, xi), detected by additivity on samples."""
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n_samples, 2, lin.d))
    linear = []
    for k in range(lin.N):
        ok = True
        for a, b in pts:
            ta = eigen_structure(lin, a[:-1], a[-1]).taus[k]
            tb = eigen_structure(lin, b[:-1], b[-1]).taus[k]
            s = a + b
            ts = eigen_structure(lin, s[:-1], s[-1]).taus[k]
            if abs(ts - ta - tb) > tol * (abs(ta) + abs(tb) + 1.0):
                ok = False
                break
        if ok:
            linear.append(k)
    return linear


def _real_roots_batch(lin: LinearizedSystem, zetas: np.ndarray) -> np.ndarray:
    """(U, N) real normal roots at each row (nan where complex)."""
    mats = np.einsum("ui,iab->uab", zetas, lin.A[:lin.d])
    mats = np.einsum("ab,ubc->uac", lin.AdInv, mats)
    vals = np.linalg.eigvals(mats)
    xis = -vals.real
    xis[vals.imag != 0] = np.nan
    return xis


def _tau_residual_batch(lin: LinearizedSystem, alphas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """min_k |tau - tau_k(eta, xi)| / |alpha| and the matching branch."""
    mats = np.einsum("ui,iab->uab", alphas[:, 1:], lin.A[1:])
    taus = -np.linalg.eigvals(mats).real
    taus.sort(axis=1)
    diff = np.abs(taus - alphas[:, :1])
    k = np.argmin(diff, axis=1)
    return diff[np.arange(len(k)), k] / np.linalg.norm(alphas, axis=1), k


def enumerate_resonances(lin: LinearizedSystem, box_radius: int, harmonic_bound: int, res_tol: float = RES_TOL,
                         C0: float | None = None, cache: LiftCache | None = None) -> ResonanceTable:
    if box_radius < 1:
        raise ValueError("box_radius must be >= 1")
    if harmonic_bound < 1:
        raise ValueError("harmonic_bound must be >= 1")
    cache = cache or LiftCache(lin)
    dirs = box_directions(lin.m, box_radius)
    modes: list[ModeKey] = []
    index: dict[tuple, int] = {}

    def register(mode: ModeKey) -> int:
        if mode.key not in index:
            index[mode.key] = len(modes)
            modes.append(mode)
        return index[mode.key]

    for n0 in dirs:
        for mode in cache(n0).modes:
            register(mode)
    base = list(modes)
    K = len(base)
    H = harmonic_bound
    lams = np.array([l for l in range(-H, H + 1) if l != 0], dtype=np.int64)
    n0s = np.array([m.n0 for m in base], dtype=np.int64)
    xi0s = np.array([m.xi0 for m in base])
    sm = np.repeat(np.arange(K), lams.size)
    sl = np.tile(lams, K)
    Nvec = sl[:, None] * n0s[sm]
    XI = sl * xi0s[sm]
    S = sm.size
    a_idx, b_idx = np.triu_indices(S)
    nsum = Nvec[a_idx] + Nvec[b_idx]
    nonzero = np.any(nsum != 0, axis=1)
    a_idx, b_idx, nsum = a_idx[nonzero], b_idx[nonzero], nsum[nonzero]
    xisum = XI[a_idx] + XI[b_idx]
    uniq, inv = np.unique(nsum, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    uz = uniq.astype(float) @ lin.zetas
    roots = _real_roots_batch(lin, uz)
    zsum = uz[inv]
    scale = np.sqrt(np.sum(zsum**2, axis=1) + xisum**2)
    with np.errstate(invalid="ignore"):
        xres = np.nanmin(np.abs(roots[inv] - xisum[:, None]), axis=1, initial=np.inf) / scale
    cand = np.nonzero(xres <= XI_PREFILTER)[0]
    alphas = np.column_stack([zsum[cand], xisum[cand]])
    tres, _ = _tau_residual_batch(lin, alphas) if cand.size else (np.zeros(0), np.zeros(0, int))
    lin_br = set(linear_branches(lin))

    rows: dict[tuple, tuple] = {}
    near: list[dict] = []
    for j, c in enumerate(cand):
        res = float(tres[j])
        if res > 10 * res_tol:
            continue
        a, b = int(a_idx[c]), int(b_idx[c])
        lp, lq = int(sl[a]), int(sl[b])
        mp, mq = int(sm[a]), int(sm[b])
        n_r0, lam_r = normalize_direction(nsum[c])
        xi_r0 = float(xisum[c]) / lam_r
        lift = cache(n_r0)
        if not lift.modes:
            continue
        ridx = int(np.argmin([abs(m.xi0 - xi_r0) for m in lift.modes]))
        mr_mode = lift.modes[ridx]
        if abs(mr_mode.xi0 - xi_r0) > XI_PREFILTER * max(1.0, abs(xi_r0)) * 10:
            continue
        if res > res_tol:
            if abs(lam_r) > H:
                continue
            near.append({"np": base[mp].n0, "lp": lp, "nq": base[mq].n0, "lq": lq, "nr": n_r0, "lr": lam_r,
                         "residual": res})
            continue
        if abs(lam_r) > H:
            continue
        mr = register(mr_mode)
        lr = lam_r
        if lr < 0:
            lp, lq, lr = -lp, -lq, -lr
        if _gcd((lp, lq, lr)) != 1:
            continue
        exact = base[mp].branch in lin_br and base[mq].branch in lin_br and mr_mode.branch in lin_br
        for (x, lx, y, ly) in ((mp, lp, mq, lq), (mq, lq, mp, lp)):
            key = (x, lx, y, ly, mr, lr)
            if key not in rows:
                rows[key] = (res, exact)
    keys = sorted(rows, key=lambda k: (modes[k[0]].key, k[1], modes[k[2]].key, k[3], modes[k[4]].key, k[5]))
    n = len(keys)
    ip = np.array([k[0] for k in keys], dtype=np.int64)
    lpa = np.array([k[1] for k in keys], dtype=np.int64)
    iq = np.array([k[2] for k in keys], dtype=np.int64)
    lqa = np.array([k[3] for k in keys], dtype=np.int64)
    ir = np.array([k[4] for k in keys], dtype=np.int64)
    lra = np.array([k[5] for k in keys], dtype=np.int64)
    residual = np.array([rows[k][0] for k in keys]) if n else np.zeros(0)
    exact = np.array([rows[k][1] for k in keys], dtype=bool) if n else np.zeros(0, bool)
    is_self = np.array([modes[k[0]].key == modes[k[2]].key for k in keys], dtype=bool) if n else np.zeros(0, bool)

    E = np.array([m.E for m in modes]) if modes else np.zeros((0, lin.N))
    Z = np.array([m.zeta for m in modes]) if modes else np.zeros((0, lin.d))
    PT = np.array([m.pitilde for m in modes]) if modes else np.zeros((0, lin.N, lin.N))
    if n:
        g_pq, coll = gamma_batch(lin, E[ip], lqa[:, None] * Z[iq], E[iq], PT[ir], E[ir])
        g_pr, _ = gamma_batch(lin, E[ip], (-lra)[:, None] * Z[ir], E[ir], PT[iq], E[iq])
    else:
        g_pq = coll = g_pr = np.zeros(0)
    table = ResonanceTable(modes, lpa, lqa, lra, ip, iq, ir, residual, g_pq.astype(complex), g_pr.astype(complex),
                           coll, is_self, exact, box_radius, harmonic_bound, res_tol, None, near)
    table.C0 = default_C0(table) if C0 is None else C0
    return table


def default_C0(table: ResonanceTable, factor: float = 2.0) -> float:
    """factor * max(largest type-1 defect, 1 / min |pi_tilde E|) over the resonant set."""
    ns = table.non_self()
    if ns.size == 0:
        return 1.0
    defect = float(np.max(table.defect[ns]))
    used = set(table.ip[ns]) | set(table.iq[ns]) | set(table.ir[ns])
    min_pe = min(float(np.linalg.norm(table.modes[i].pitildeE)) for i in used)
    return factor * max(defect, 1.0 / min_pe)


def classify_resonance_type(res: Resonance, C0: float) -> int:
    return 1 if abs(res.gamma_pq + res.gamma_pr) <= C0 * alpha_norm(res.lp, res.p) else 2


def classify_gamma_pair(gamma_pq: complex, gamma_pr: complex, alpha_p_norm: float, C0: float) -> int:
    return 1 if abs(gamma_pq + gamma_pr) <= C0 * alpha_p_norm else 2


def linear_branch_oracle(m: int, box_radius: int, harmonic_bound: int) -> set[tuple]:
    """Exact integer enumeration of resonances on a branch that is linear in the frequency.

    Every sum of two lattice points lifts on such a branch, so the triples are
    determined by integer arithmetic alone.  Entries are
    (n_p, lp, n_q, lq, n_r, lr) with lr > 0 and gcd(lp, lq, lr) = 1.
    """
    dirs = box_directions(m, box_radius)
    H = harmonic_bound
    out = set()
    for a in dirs:
        for b in dirs:
            if a == b:
                continue
            for lp in range(-H, H + 1):
                if lp == 0:
                    continue
                for lq in range(-H, H + 1):
                    if lq == 0:
                        continue
                    n = tuple(lp * x + lq * y for x, y in zip(a, b))
                    n_r, lr = normalize_direction(n)
                    if abs(lr) > H:
                        continue
                    p_, q_ = lp, lq
                    if lr < 0:
                        p_, q_, lr = -lp, -lq, -lr
                    if _gcd((p_, q_, lr)) != 1:
                        continue
                    out.add((a, p_, b, q_, n_r, lr))
    return out


# ----------------------------------------------------------------------------
# partition and assumption report

def partition_frequency_sets(table: ResonanceTable, incoming: Iterable[ModeKey]) -> dict:
    inc_res: set = set()
    out_res: set = set()
    for i in table.non_self():
        trio = [table.modes[table.ip[i]], table.modes[table.iq[i]], table.modes[table.ir[i]]]
        classes = {m.cls for m in trio}
        if len(classes) != 1:
            raise PartitionClosureViolation(
                f"resonance couples {', '.join(f'{m.n0}:{m.cls}' for m in trio)}")
        target = inc_res if classes == {"incoming"} else out_res
        target.update(m.key for m in trio)
    incoming_keys = [m.key for m in incoming]
    nonres = [k for k in incoming_keys if k not in inc_res]
    return {"F_inc_res": inc_res, "F_out_res": out_res, "nonresonant": nonres}


def check_assumptions(lin: LinearizedSystem, box_radius: int, C0: float | None = None, harmonic_bound: int = 3,
                      kl_samples: int = 2000, sphere_samples: int = 2000, small_divisor_radius: int | None = None,
                      seed: int = 0) -> dict:
    """Structured pass/fail report over every structural assumption, with margins."""
    from .boundary_spectral import lopatinskii_scan
    from .char_variety import check_strict_hyperbolicity
    from .system_model import rational_dependence

    checks: list[dict] = []

    def add(name: str, ok: bool, value, tolerance=None, **extra) -> None:
        checks.append({"name": name, "value": value, "tolerance": tolerance, "pass": bool(ok), **extra})

    Ad = lin.Ad
    detAd = float(np.linalg.det(Ad))
    rankB = int(np.linalg.matrix_rank(lin.B))
    p = lin.p
    add("noncharacteristic_boundary", abs(detAd) > 1e-12 * np.linalg.norm(Ad, 2) ** lin.N, detAd, 1e-12)
    add("boundary_rank_matches_incoming_count", rankB == lin.B.shape[0] == p, {"rank_B": rankB, "rows_B": lin.B.shape[0],
        "positive_eigenvalues": p})
    hyp = check_strict_hyperbolicity(lin, sphere_samples, seed=seed)
    add("strict_hyperbolicity", hyp["pass"], hyp["min_gap"], hyp["tolerance"], worst_point=hyp["worst_point"])
    dep = rational_dependence(lin.zetas)
    add("frequency_independence", not dep, [f"zeta_{i} = {str(r)} zeta_{j}" for i, j, r in dep])
    if lin.B.shape[0] == p:
        kl = lopatinskii_scan(lin, lin.B, kl_samples, seed=seed)
        add("uniform_kreiss_lopatinskii", kl["pass"], kl["min_det"], kl["tolerance"], worst=kl["worst"],
            skipped=kl["skipped"])
    else:
        add("uniform_kreiss_lopatinskii", False, None, None, reason="B does not have p rows")
    gl = glancing_second_derivative_check(lin)
    add("glancing_nondegeneracy", gl["pass"], gl["min_second_derivative"])

    rays = glancing_rays(lin)
    sd = small_divisor_fit(lin, small_divisor_radius or max(box_radius, 2), rays=rays, raise_on_glancing=False)
    add("no_glancing_on_lattice", not sd["exact_glancing"], len(sd["exact_glancing"]), 0,
        hits=[list(h) for h in sd["exact_glancing"][:10]])
    add("small_divisors", (not sd["exact_glancing"]) and sd["c"] > 0, {"c": sd["c"], "a1": sd["a1"]},
        box_radius=sd["box_radius"])
    if sd["exact_glancing"] or not checks[-1]["pass"]:
        add("no_incoming_outgoing_resonance", False, None, reason="lattice not liftable")
        add("resonance_control", False, None, reason="lattice not liftable")
        return {"checks": checks, "pass": False}
    try:
        table = enumerate_resonances(lin, box_radius, harmonic_bound, C0=C0)
    except GlancingOnLattice as exc:
        add("no_incoming_outgoing_resonance", False, None, reason=str(exc))
        add("resonance_control", False, None, reason=str(exc))
        return {"checks": checks, "pass": False}
    cross = 0
    ns = table.non_self()
    for i in ns:
        classes = {table.modes[table.ip[i]].cls, table.modes[table.iq[i]].cls, table.modes[table.ir[i]].cls}
        cross += len(classes) > 1
    add("no_incoming_outgoing_resonance", cross == 0, cross, 0, box_radius=box_radius, harmonic_bound=harmonic_bound)
    types = table.types()
    type2 = int(np.sum(types[ns] == "2")) if ns.size else 0
    out_res = int(sum(table.modes[table.ir[i]].cls == "outgoing" for i in ns))
    used = set(table.ip[ns]) | set(table.iq[ns]) | set(table.ir[ns])
    min_pe = min((float(np.linalg.norm(table.modes[i].pitildeE)) for i in used), default=float("inf"))
    ok = (min_pe >= 1.0 / table.C0) and type2 == 0 and out_res == 0
    add("resonance_control", ok, {"C0": table.C0, "type2_count": type2, "outgoing_resonances": out_res,
                                  "min_pitilde_E": min_pe, "resonances": int(ns.size)},
        box_radius=box_radius, note=f"finite box only: radius {box_radius}, harmonics {harmonic_bound}")
    return {"checks": checks, "pass": all(c["pass"] for c in checks)}


# ----------------------------------------------------------------------------
# output

def _fmt(x: float) -> str:
    return repr(float(x))


def resonance_csv(table: ResonanceTable, include_self: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    types = table.types()
    for i in range(len(table)):
        if table.is_self[i] and not include_self:
            continue
        p, q, r = table.modes[table.ip[i]], table.modes[table.iq[i]], table.modes[table.ir[i]]
        w.writerow([int(table.lp[i]), int(table.lq[i]), int(table.lr[i]),
                    ";".join(map(str, p.n0)), _fmt(p.xi0), ";".join(map(str, q.n0)), _fmt(q.xi0),
                    ";".join(map(str, r.n0)), _fmt(r.xi0),
                    _fmt(table.gamma_pq[i].real), _fmt(table.gamma_pq[i].imag),
                    _fmt(table.gamma_pr[i].real), _fmt(table.gamma_pr[i].imag), types[i], _fmt(table.residual[i])])
    return buf.getvalue()
