"""Boundary symbol, stable subspaces, Kreiss-Lopatinskii scans, boundary
inversion and evanescent propagators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .char_variety import (
    GLANCING_TOL,
    NEAR_GLANCING_TOL,
    eigen_structure,
    fix_phase,
    group_velocity,
    sphere_points,
)
from .errors import (
    DefectiveElliptic,
    DimensionMismatch,
    GlancingFrequency,
    IllConditioned,
    NotASymmetrizer,
)
from .system_model import LinearizedSystem

REAL_ROOT_TOL = 1e-10
ROOT_SEPARATION_TOL = 1e-8
DEFECT_TOL = 1e-8
KL_TOL = 1e-3
DEFAULT_GAMMAS = (0.0, 0.01, 0.1, 1.0)


@dataclass(frozen=True)
class BoundarySymbol:
    sigma: complex
    eta: np.ndarray
    A: np.ndarray

    @property
    def gamma(self) -> float:
        return float(-np.imag(self.sigma))


@dataclass(frozen=True)
class Root:
    xi: complex
    cls: str                  # incoming | outgoing | elliptic-stable | elliptic-unstable
    branch: int | None = None
    dxitau: float | None = None


@dataclass(frozen=True)
class StableDecomposition:
    zeta: np.ndarray
    roots: list[Root]
    R: np.ndarray             # column j: eigenvector of the boundary symbol for roots[j]
    Rinv: np.ndarray
    E_minus_basis: np.ndarray
    stable_idx: tuple[int, ...]
    projectors: dict = field(default_factory=dict)

    def spectral_projector(self, j: int) -> np.ndarray:
        return np.outer(self.R[:, j], self.Rinv[j])

    def indices(self, cls: str) -> list[int]:
        return [j for j, r in enumerate(self.roots) if r.cls == cls]

    @property
    def decay_rate(self) -> float:
        """Smallest Im xi over elliptic-stable roots (inf when there are none)."""
        ims = [r.xi.imag for r in self.roots if r.cls == "elliptic-stable"]
        return float(min(ims)) if ims else float("inf")


def boundary_symbol(lin: LinearizedSystem, sigma: complex, eta: np.ndarray) -> BoundarySymbol:
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.size != lin.d - 1:
        raise DimensionMismatch(f"eta has {eta.size} components, expected {lin.d - 1}")
    if sigma == 0 and not np.any(eta):
        raise DimensionMismatch("zeta must be nonzero")
    if np.imag(sigma) > 0:
        raise ValueError("Im sigma must be <= 0 (gamma >= 0)")
    inner = sigma * np.eye(lin.N) + np.tensordot(eta, lin.A[1:lin.d], axes=1)
    return BoundarySymbol(complex(sigma), eta, -1j * (lin.AdInv @ inner))


def _real_symbol(lin: LinearizedSystem, zeta: np.ndarray) -> np.ndarray:
    """M with boundary symbol = -i M for real zeta; the normal roots are xi = -eig(M)."""
    return lin.AdInv @ np.tensordot(zeta, lin.A[:lin.d], axes=1)


def decompose_stable(lin: LinearizedSystem, zeta: np.ndarray, glancing_tol: float = GLANCING_TOL) -> StableDecomposition:
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    if zeta.size != lin.d:
        raise DimensionMismatch(f"zeta has {zeta.size} components, expected {lin.d}")
    scale = float(np.linalg.norm(zeta))
    if scale == 0.0:
        raise DimensionMismatch("zeta must be nonzero")
    M = _real_symbol(lin, zeta)
    vals, vecs = np.linalg.eig(M)
    xis = -vals.astype(complex)
    N = lin.N
    for a in range(N):
        for b in range(a + 1, N):
            if abs(xis[a] - xis[b]) <= ROOT_SEPARATION_TOL * scale:
                raise GlancingFrequency(f"coalescing normal roots at zeta = {zeta.tolist()}")
    tau, eta = zeta[0], zeta[1:]
    roots: list[Root] = []
    cols = []
    for j in range(N):
        xi = xis[j]
        if abs(xi.imag) <= REAL_ROOT_TOL * scale:
            if xi.imag != 0.0:
                raise GlancingFrequency(f"nearly real complex root at zeta = {zeta.tolist()}")
            xr = float(xi.real)
            es = eigen_structure(lin, eta, xr)
            k = int(np.argmin(np.abs(es.taus - tau)))
            dxi = float(group_velocity(lin, es, k)[-1])
            if abs(dxi) < glancing_tol:
                raise GlancingFrequency(f"glancing root xi = {xr} at zeta = {zeta.tolist()}")
            roots.append(Root(complex(xr), "incoming" if dxi < 0 else "outgoing", k, dxi))
            cols.append(fix_phase(vecs[:, j].real).astype(complex))
        else:
            cls = "elliptic-stable" if xi.imag > 0 else "elliptic-unstable"
            roots.append(Root(complex(xi), cls))
            cols.append(fix_phase(vecs[:, j].astype(complex)))
    order = sorted(range(N), key=lambda j: (roots[j].cls.startswith("elliptic"), roots[j].xi.real, roots[j].xi.imag))
    roots = [roots[j] for j in order]
    R = np.column_stack([cols[j] for j in order])
    svals = np.linalg.svd(R, compute_uv=False)
    if svals[-1] < DEFECT_TOL * svals[0]:
        raise DefectiveElliptic(f"eigenbasis of the boundary symbol is numerically defective at zeta = {zeta.tolist()}")
    Rinv = np.linalg.inv(R)
    stable = tuple(j for j, r in enumerate(roots) if r.cls in ("incoming", "elliptic-stable"))
    basis = R[:, list(stable)]
    dec = StableDecomposition(zeta, roots, R, Rinv, basis, stable)
    _attach_projectors(dec)
    return dec


def _attach_projectors(dec: StableDecomposition) -> None:
    N = dec.R.shape[0]
    proj: dict = {"incoming": {}}
    ell_s = np.zeros((N, N), complex)
    ell_u = np.zeros((N, N), complex)
    for j, r in enumerate(dec.roots):
        P = dec.spectral_projector(j)
        if r.cls == "incoming":
            proj["incoming"][j] = P
        elif r.cls == "elliptic-stable":
            ell_s += P
        elif r.cls == "elliptic-unstable":
            ell_u += P
    proj["elliptic_minus"] = ell_s
    proj["elliptic_CN"] = ell_s
    proj["elliptic_plus_CN"] = ell_u
    dec.projectors.update(proj)


def stable_basis(lin: LinearizedSystem, sigma: complex, eta: np.ndarray) -> tuple[np.ndarray, int]:
    """Orthonormal basis of E_-(zeta) and the number of stable eigenvalues.

    For gamma > 0 an ordered complex Schur form isolates the left-half-plane
    spectrum; for gamma = 0 the basis comes from the classified decomposition.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if np.imag(sigma) < 0:
        sym = boundary_symbol(lin, sigma, eta)
        _, Z, sdim = sla.schur(sym.A, output="complex", sort="lhp")
        return Z[:, :sdim], int(sdim)
    dec = decompose_stable(lin, np.concatenate([[float(np.real(sigma))], eta]))
    Q, _ = np.linalg.qr(dec.E_minus_basis)
    return Q, len(dec.stable_idx)


def lopatinskii_value(lin: LinearizedSystem, B: np.ndarray, sigma: complex, eta: np.ndarray) -> float:
    Q, count = stable_basis(lin, sigma, eta)
    if count != B.shape[0]:
        return 0.0
    return float(abs(np.linalg.det(B @ Q)))


def hemisphere_samples(d: int, n_samples: int, gammas=DEFAULT_GAMMAS, seed: int = 0) -> list[tuple[complex, np.ndarray]]:
    """(sigma, eta) pairs: unit (tau, eta) points repeated at each gamma level."""
    per = max(1, n_samples // len(gammas))
    pts = sphere_points(d, per, seed)
    out = []
    for g in gammas:
        for pt in pts:
            out.append((complex(pt[0], -g), pt[1:].copy()))
    return out


def lopatinskii_scan(lin: LinearizedSystem, B: np.ndarray, n_samples: int, gammas=DEFAULT_GAMMAS,
                     kl_tol: float = KL_TOL, seed: int = 0) -> dict:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    p = lin.p
    if B.shape != (p, lin.N):
        return {"min_det": 0.0, "worst": None, "skipped": 0, "hersh_ok": False, "pass": False,
                "reason": f"B has shape {B.shape}, expected ({p}, {lin.N})"}
    best = np.inf
    worst = None
    skipped = 0
    hersh_ok = True
    for sigma, eta in hemisphere_samples(lin.d, n_samples, gammas, seed):
        try:
            if sigma.imag == 0:
                dec = decompose_stable(lin, np.concatenate([[sigma.real], eta]))
                if any(r.dxitau is not None and abs(r.dxitau) < NEAR_GLANCING_TOL for r in dec.roots):
                    skipped += 1
                    continue
                Q, _ = np.linalg.qr(dec.E_minus_basis)
                count = len(dec.stable_idx)
            else:
                Q, count = stable_basis(lin, sigma, eta)
        except (GlancingFrequency, DefectiveElliptic):
            skipped += 1
            continue
        if count != p:
            hersh_ok = False
            val = 0.0
        else:
            val = float(abs(np.linalg.det(B @ Q)))
        if val < best:
            best = val
            worst = {"tau": sigma.real, "gamma": -sigma.imag, "eta": eta.tolist()}
    return {"min_det": float(best), "worst": worst, "skipped": skipped, "hersh_ok": hersh_ok,
            "tolerance": kl_tol, "pass": bool(hersh_ok and best > kl_tol)}


def strictly_dissipative_check(lin: LinearizedSystem, B: np.ndarray, S: Callable[[np.ndarray], np.ndarray],
                               n_dirs: int = 16, kernel_vector: np.ndarray | None = None, seed: int = 0,
                               tol: float = 1e-10) -> dict:
    S0 = np.asarray(S(np.zeros(lin.N)), dtype=float)
    scale = max(np.linalg.norm(S0), 1.0)
    if np.linalg.norm(S0 - S0.T) > tol * scale:
        raise NotASymmetrizer("S(0) is not symmetric")
    for i in range(1, lin.d + 1):
        SA = S0 @ lin.A[i]
        if np.linalg.norm(SA - SA.T) > tol * max(np.linalg.norm(SA), 1.0):
            raise NotASymmetrizer(f"S A_{i} is not symmetric")
    spd = bool(np.min(np.linalg.eigvalsh(S0)) > 0)
    SAd = S0 @ lin.Ad
    if kernel_vector is not None:
        gens = np.asarray(kernel_vector, dtype=float).reshape(1, -1)
    else:
        K = sla.null_space(np.atleast_2d(B))
        if K.shape[1] == 1:
            gens = K.T
        else:
            coef = np.random.default_rng(seed).standard_normal((n_dirs, K.shape[1]))
            gens = (coef @ K.T)
            gens /= np.linalg.norm(gens, axis=1, keepdims=True)
    values = [float(e @ SAd @ e) for e in gens]
    margin = max(values)
    return {"spd": spd, "margin": margin, "pass": bool(spd and margin < 0)}


def boundary_solve(dec: StableDecomposition, B: np.ndarray, g: np.ndarray, cond_max: float = 1e10) -> np.ndarray:
    g = np.asarray(g, dtype=complex).reshape(-1)
    BQ = np.atleast_2d(B) @ dec.E_minus_basis
    if BQ.shape[0] != BQ.shape[1]:
        raise DimensionMismatch(f"B restricted to E_- has shape {BQ.shape}")
    if np.linalg.cond(BQ) > cond_max:
        raise IllConditioned(f"restricted boundary matrix condition number exceeds {cond_max:.1e}")
    if not np.any(g):
        return np.zeros(dec.R.shape[0], complex)
    return dec.E_minus_basis @ np.linalg.solve(BQ, g)


def restricted_inverse(dec: StableDecomposition, B: np.ndarray) -> np.ndarray:
    """Matrix of g -> boundary_solve(dec, B, g)."""
    BQ = np.atleast_2d(B) @ dec.E_minus_basis
    return dec.E_minus_basis @ np.linalg.inv(BQ)


def evanescent_propagator(dec: StableDecomposition, t: float) -> np.ndarray:
    """exp(t A(zeta)) restricted to the elliptic-stable part (t >= 0) or its complement (t <= 0)."""
    mus = np.array([1j * r.xi for r in dec.roots])
    if t >= 0:
        sel = [j for j, r in enumerate(dec.roots) if r.cls == "elliptic-stable"]
    else:
        sel = [j for j, r in enumerate(dec.roots) if r.cls != "elliptic-stable"]
    if not sel:
        return np.zeros_like(dec.R)
    Rs = dec.R[:, sel]
    return (Rs * np.exp(t * mus[sel])) @ dec.Rinv[sel]
