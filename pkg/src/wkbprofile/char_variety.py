"""Eigen-structure of the interior symbol: branches tau_k, spectral projectors,
partial inverses, group velocities and frequency classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import (
    ComplexSpectrum,
    DegenerateBranch,
    DimensionMismatch,
    EigenvalueCollision,
    GlancingBranch,
    NearCharacteristicAmbiguity,
)
from .system_model import LinearizedSystem

GAP_TOL = 1e-8
IMAG_TOL = 1e-9
CHAR_TOL = 1e-9
AMBIGUITY_FACTOR = 1e3
GLANCING_TOL = 1e-8
NEAR_GLANCING_TOL = 1e-5
VELOCITY_SAFETY = 1.05


@dataclass(frozen=True)
class EigenStructure:
    eta_xi: np.ndarray
    taus: np.ndarray
    rights: np.ndarray      # column k is E_k
    lefts: np.ndarray       # row k is l_k, l_k . E_k = 1
    pis: np.ndarray         # (N, N, N)
    pis_tilde: np.ndarray   # (N, N, N)

    @property
    def eta(self) -> np.ndarray:
        return self.eta_xi[:-1]

    @property
    def xi(self) -> float:
        return float(self.eta_xi[-1])


@dataclass(frozen=True)
class FrequencyClass:
    tag: str
    branch: int | None = None
    dxitau: float | None = None
    near_glancing: bool = False


def fix_phase(vec: np.ndarray) -> np.ndarray:
    """Scale to unit norm and rotate so the largest-modulus entry is real positive."""
    vec = vec / np.linalg.norm(vec)
    k = int(np.argmax(np.abs(vec)))
    phase = vec[k] / abs(vec[k])
    out = vec / phase
    if np.isrealobj(vec):
        return out
    out[k] = abs(out[k])
    return out


def eigen_structure(lin: LinearizedSystem, eta: np.ndarray, xi: float, gap_tol: float = GAP_TOL) -> EigenStructure:
    eta = np.asarray(eta, dtype=float).reshape(-1)
    eta_xi = np.append(eta, float(xi))
    scale = np.linalg.norm(eta_xi)
    if scale == 0.0:
        raise DimensionMismatch("(eta, xi) must be nonzero")
    A = lin.symbol(eta, xi)
    vals, vecs = np.linalg.eig(A)
    anorm = max(np.linalg.norm(A, 2), 1e-300)
    if np.max(np.abs(vals.imag)) > IMAG_TOL * anorm:
        raise ComplexSpectrum(f"eigenvalues of A(eta, xi) have imaginary part {np.max(np.abs(vals.imag)):.3e}")
    taus = -vals.real
    order = np.argsort(taus, kind="stable")
    taus = taus[order]
    R = vecs.real[:, order]
    if lin.N > 1:
        gap = float(np.min(np.diff(taus)))
        if gap <= gap_tol * scale:
            raise EigenvalueCollision(f"eigenvalue gap {gap:.3e} at (eta, xi) = {eta_xi.tolist()}")
    R = np.column_stack([fix_phase(R[:, k]) for k in range(lin.N)])
    Linv = np.linalg.inv(R)
    pis = np.einsum("ik,kj->kij", R, Linv)
    pis_tilde = np.einsum("ab,kbc,cd->kad", lin.AdInv, pis, lin.Ad)
    return EigenStructure(eta_xi, taus, R, Linv, pis, pis_tilde)


def group_velocity(lin: LinearizedSystem, es: EigenStructure, k: int) -> np.ndarray:
    """Gradient of tau_k in (eta, xi) from first-order eigenvalue perturbation."""
    r = es.rights[:, k]
    left = es.lefts[k]
    lr = float(left @ r)
    if not np.isfinite(lr) or abs(lr - 1.0) > 1e-8:
        raise DegenerateBranch(f"left/right normalization l.r = {lr}")
    return -np.array([left @ lin.A[i] @ r for i in range(1, lin.d + 1)]) / lr


def _resolve_branch(lin: LinearizedSystem, alpha: np.ndarray, char_tol: float) -> tuple[EigenStructure, int] | None:
    tau = alpha[0]
    eta_xi = alpha[1:]
    scale = np.linalg.norm(eta_xi)
    es = eigen_structure(lin, eta_xi[:-1], eta_xi[-1])
    dist = np.abs(es.taus - tau)
    k = int(np.argmin(dist))
    if dist[k] <= char_tol * scale:
        return es, k
    if dist[k] <= AMBIGUITY_FACTOR * char_tol * scale:
        raise NearCharacteristicAmbiguity(
            f"|tau - tau_{k}| = {dist[k]:.3e} is inside the ambiguity band at alpha = {alpha.tolist()}")
    return None


def frequency_operators(lin: LinearizedSystem, alpha: np.ndarray,
                        char_tol: float = CHAR_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pi_alpha, pi_tilde_alpha, Q_alpha) with Q L(0, alpha) = I - pi_alpha."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != lin.d + 1:
        raise DimensionMismatch(f"alpha has {alpha.size} components, expected {lin.d + 1}")
    N = lin.N
    eye = np.eye(N)
    if not np.any(alpha):
        return eye, eye.copy(), eye.copy()
    if not np.any(alpha[1:]):
        return np.zeros((N, N)), np.zeros((N, N)), eye / alpha[0]
    hit = _resolve_branch(lin, alpha, char_tol)
    if hit is None:
        return np.zeros((N, N)), np.zeros((N, N)), np.linalg.inv(lin.L(alpha))
    es, k = hit
    tau = alpha[0]
    Q = np.zeros((N, N))
    for j in range(N):
        if j != k:
            Q += es.pis[j] / (tau - es.taus[j])
    return es.pis[k].copy(), es.pis_tilde[k].copy(), Q


def classify_frequency(lin: LinearizedSystem, alpha: np.ndarray, glancing_tol: float = GLANCING_TOL,
                       char_tol: float = CHAR_TOL) -> FrequencyClass:
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if not np.any(alpha):
        return FrequencyClass("zero")
    if not np.any(alpha[1:]):
        return FrequencyClass("noncharacteristic")
    hit = _resolve_branch(lin, alpha, char_tol)
    if hit is None:
        return FrequencyClass("noncharacteristic")
    es, k = hit
    dxitau = float(group_velocity(lin, es, k)[-1])
    if abs(dxitau) < glancing_tol:
        return FrequencyClass("glancing", k, dxitau, True)
    near = abs(dxitau) < NEAR_GLANCING_TOL
    return FrequencyClass("incoming" if dxitau < 0 else "outgoing", k, dxitau, near)


def sphere_points(dim: int, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform points on the unit sphere of R^dim."""
    if dim == 1:
        return np.where(np.arange(n) % 2 == 0, 1.0, -1.0).reshape(-1, 1)
    if dim == 2:
        ang = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        k = np.arange(n) + 0.5
        z = 1.0 - 2.0 * k / n
        phi = np.pi * (1.0 + np.sqrt(5.0)) * k
        rho = np.sqrt(1.0 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    pts = np.random.default_rng(seed).standard_normal((n, dim))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def max_group_speed(lin: LinearizedSystem, n_samples: int, seed: int = 0) -> float:
    """max over sampled unit (eta, xi) of max_k |grad tau_k|, without safety factor."""
    best = 0.0
    for pt in sphere_points(lin.d, n_samples, seed):
        es = eigen_structure(lin, pt[:-1], pt[-1])
        for k in range(lin.N):
            best = max(best, float(np.linalg.norm(group_velocity(lin, es, k))))
    return best


def velocity_bound(lin: LinearizedSystem, n_samples: int, seed: int = 0, safety: float = VELOCITY_SAFETY) -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return safety * max_group_speed(lin, n_samples, seed)


def verify_lax(lin: LinearizedSystem, es: EigenStructure, k: int, glancing_tol: float = GLANCING_TOL) -> dict[str, float]:
    grad = group_velocity(lin, es, k)
    dxi = float(grad[-1])
    if abs(dxi) < glancing_tol:
        raise GlancingBranch(f"branch {k} is glancing at {es.eta_xi.tolist()}")
    pi, pit = es.pis[k], es.pis_tilde[k]
    pitpi = pit @ pi
    report = {"time": float(np.linalg.norm(pit @ lin.Atilde[0] @ pi + pitpi / dxi))}
    for i in range(1, lin.d):
        res = pit @ lin.Atilde[i] @ pi - (grad[i - 1] / dxi) * pitpi
        report[f"tangential_{i}"] = float(np.linalg.norm(res))
    E = es.rights[:, k]
    report["polarization"] = float(np.linalg.norm(pit @ E + dxi * (lin.AdInv @ E)))
    return report


def check_strict_hyperbolicity(lin: LinearizedSystem, n_samples: int, gap_tol: float = GAP_TOL,
                               seed: int = 0) -> dict:
    min_gap = np.inf
    worst = None
    for pt in sphere_points(lin.d, n_samples, seed):
        vals = np.linalg.eigvals(lin.symbol(pt[:-1], pt[-1]))
        if np.max(np.abs(vals.imag)) > IMAG_TOL * max(np.linalg.norm(lin.symbol(pt[:-1], pt[-1]), 2), 1e-300):
            gap = 0.0
        else:
            taus = np.sort(-vals.real)
            gap = float(np.min(np.diff(taus))) if lin.N > 1 else np.inf
        if gap < min_gap:
            min_gap, worst = gap, pt.tolist()
    return {"min_gap": float(min_gap), "worst_point": worst, "tolerance": gap_tol, "pass": bool(min_gap > gap_tol)}


def group_velocity_lower_bound_check(points: Iterable[tuple[np.ndarray, float]],
                                     dist_fn: Callable[[np.ndarray], float]) -> dict:
    """Best C with |d_xi tau| >= C dist(zeta, G)^(1/2) / |zeta|^(1/2).

    ``points`` yields (zeta, d_xi tau) for characteristic lattice frequencies.
    """
    best = np.inf
    violations = 0
    count = 0
    for zeta, dxitau in points:
        zeta = np.asarray(zeta, dtype=float)
        dist = float(dist_fn(zeta))
        count += 1
        rhs = np.sqrt(dist / np.linalg.norm(zeta))
        if rhs == 0.0:
            continue
        if dxitau == 0.0:
            violations += 1
            continue
        best = min(best, abs(dxitau) / rhs)
    ok = violations == 0 and count > 0 and best > 0
    return {"C": float(best) if np.isfinite(best) else None, "violations": violations, "points": count, "pass": bool(ok)}
