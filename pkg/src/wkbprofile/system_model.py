"""Quasilinear first-order systems, their linearization at the equilibrium and
the first-order perturbation operator L1_tilde.

Coefficient providers take the perturbation ``u`` (so ``u = 0`` is the
equilibrium) and return dense ``N x N`` matrices.  Index ``i`` runs over
``1..d``; ``A_0`` is the identity by convention and ``A_d`` is the matrix in
front of the normal derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from .errors import (
    ConfigParse,
    DimensionMismatch,
    NonFiniteCoefficient,
    SingularNormalMatrix,
)

CoeffProvider = Callable[[int, np.ndarray], np.ndarray]
DiffProvider = Callable[[int, np.ndarray], np.ndarray]
SymmetrizerProvider = Callable[[np.ndarray], np.ndarray]

MATRIX_TOL = 1e-10
DEFAULT_FD_STEP = 1e-6


@dataclass(frozen=True)
class HyperbolicSystem:
    d: int
    N: int
    m: int
    coeffs: CoeffProvider
    B: np.ndarray
    zetas: np.ndarray
    diffs: DiffProvider | None = None
    symmetrizer: SymmetrizerProvider | None = None
    name: str = "custom"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.d < 2 or self.N < 1 or self.m < 2:
            raise DimensionMismatch(f"need d >= 2, N >= 1, m >= 2; got d={self.d}, N={self.N}, m={self.m}")
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        zetas = np.atleast_2d(np.asarray(self.zetas, dtype=float))
        if B.shape[1] != self.N:
            raise DimensionMismatch(f"B has {B.shape[1]} columns, expected N={self.N}")
        if zetas.shape != (self.m, self.d):
            raise DimensionMismatch(f"zetas shape {zetas.shape}, expected ({self.m}, {self.d})")
        if np.any(np.linalg.norm(zetas, axis=1) == 0.0):
            raise DimensionMismatch("boundary frequencies must be nonzero")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "zetas", zetas)

    def matrix(self, i: int, u: np.ndarray | None = None) -> np.ndarray:
        """A_i(u) with A_0 = I; validates shape and finiteness."""
        if u is None:
            u = np.zeros(self.N)
        if i == 0:
            return np.eye(self.N)
        if not 1 <= i <= self.d:
            raise DimensionMismatch(f"coefficient index {i} outside 0..{self.d}")
        A = np.asarray(self.coeffs(i, np.asarray(u, dtype=float)), dtype=float)
        if A.shape != (self.N, self.N):
            raise DimensionMismatch(f"A_{i} has shape {A.shape}, expected ({self.N}, {self.N})")
        if not np.all(np.isfinite(A)):
            raise NonFiniteCoefficient(f"A_{i}(u) has non-finite entries")
        return A


def rational_dependence(zetas: np.ndarray, max_den: int = 1000, tol: float = 1e-12) -> list[tuple[int, int, Fraction]]:
    """Pairs (i, j, ratio) with zeta_i = ratio * zeta_j for a small-denominator rational ratio."""
    out = []
    m = zetas.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            a, b = zetas[i], zetas[j]
            cross = np.linalg.norm(np.outer(a, b) - np.outer(b, a))
            if cross > tol * np.linalg.norm(a) * np.linalg.norm(b):
                continue
            ratio = float(np.dot(a, b) / np.dot(b, b))
            frac = Fraction(ratio).limit_denominator(max_den)
            if abs(float(frac) - ratio) <= tol * max(1.0, abs(ratio)):
                out.append((i, j, frac))
    return out


def fd_differential(system: HyperbolicSystem, i: int, v: np.ndarray, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central finite difference of A_i at 0 in the direction v."""
    v = np.asarray(v, dtype=float)
    if i == 0:
        return np.zeros((system.N, system.N))
    return (system.matrix(i, step * v) - system.matrix(i, -step * v)) / (2.0 * step)


@dataclass(frozen=True)
class LinearizedSystem:
    system: HyperbolicSystem
    A: np.ndarray          # (d+1, N, N); A[0] = I
    AdInv: np.ndarray
    Atilde: np.ndarray     # (d, N, N); Atilde[i] = Ad^-1 A_i, Atilde[0] = Ad^-1
    dA: np.ndarray         # (d+1, N, N, N); dA[i, :, :, k] = dA_i(0) e_k
    dAtilde: np.ndarray    # (d, N, N, N)
    analytic_diffs: bool

    @property
    def d(self) -> int:
        return self.system.d

    @property
    def N(self) -> int:
        return self.system.N

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def B(self) -> np.ndarray:
        return self.system.B

    @property
    def zetas(self) -> np.ndarray:
        return self.system.zetas

    @property
    def Ad(self) -> np.ndarray:
        return self.A[self.system.d]

    @property
    def p(self) -> int:
        """Number of positive eigenvalues of A_d(0)."""
        return int(np.sum(np.linalg.eigvals(self.Ad).real > 0))

    def dA_dot(self, i: int, v: np.ndarray) -> np.ndarray:
        return self.dA[i] @ np.asarray(v)

    def dAtilde_dot(self, i: int, v: np.ndarray) -> np.ndarray:
        return self.dAtilde[i] @ np.asarray(v)

    def symbol(self, eta: np.ndarray, xi: float) -> np.ndarray:
        """A(eta, xi) = sum eta_i A_i(0) + xi A_d(0)."""
        eta = np.asarray(eta, dtype=float).reshape(-1)
        if eta.size != self.d - 1:
            raise DimensionMismatch(f"eta has {eta.size} components, expected {self.d - 1}")
        return np.tensordot(eta, self.A[1:self.d], axes=1) + xi * self.Ad

    def L(self, alpha: np.ndarray) -> np.ndarray:
        """L(0, alpha) = tau I + A(eta, xi) for alpha = (tau, eta, xi)."""
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != self.d + 1:
            raise DimensionMismatch(f"alpha has {alpha.size} components, expected {self.d + 1}")
        return np.tensordot(alpha, self.A, axes=1)


def linearize(system: HyperbolicSystem, fd_step: float = DEFAULT_FD_STEP) -> LinearizedSystem:
    d, N = system.d, system.N
    A = np.stack([system.matrix(i) for i in range(d + 1)])
    Ad = A[d]
    scale = max(np.linalg.norm(Ad, 2), 1e-300)
    det = np.linalg.det(Ad)
    if not np.isfinite(det) or abs(det) < 1e-12 * scale**N:
        raise SingularNormalMatrix(f"|det A_d(0)| = {abs(det):.3e} is below threshold")
    AdInv = np.linalg.inv(Ad)
    Atilde = np.stack([AdInv @ A[i] for i in range(d)])

    dA = np.zeros((d + 1, N, N, N))
    basis = np.eye(N)
    for i in range(1, d + 1):
        for k in range(N):
            if system.diffs is not None:
                col = np.asarray(system.diffs(i, basis[k]), dtype=float)
            else:
                col = fd_differential(system, i, basis[k], fd_step)
            if col.shape != (N, N):
                raise DimensionMismatch(f"dA_{i} has shape {col.shape}")
            if not np.all(np.isfinite(col)):
                raise NonFiniteCoefficient(f"dA_{i} has non-finite entries")
            dA[i, :, :, k] = col

    dAtilde = np.zeros((d, N, N, N))
    for k in range(N):
        dAd = dA[d, :, :, k]
        for i in range(d):
            dAtilde[i, :, :, k] = AdInv @ dA[i, :, :, k] - AdInv @ dAd @ AdInv @ A[i]
    return LinearizedSystem(system, A, AdInv, Atilde, dA, dAtilde, system.diffs is not None)


def apply_L1_tilde(lin: LinearizedSystem, v: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """sum_{i=0}^{d-1} zeta^i dAtilde_i(0) v; zeta^0 is the time slot."""
    v = np.asarray(v)
    zeta = np.asarray(zeta).reshape(-1)
    if v.shape != (lin.N,):
        raise DimensionMismatch(f"v has shape {v.shape}, expected ({lin.N},)")
    if zeta.size != lin.d:
        raise DimensionMismatch(f"zeta has {zeta.size} components, expected {lin.d}")
    return np.einsum("i,iabk,k->ab", zeta, lin.dAtilde, v)


def _constant_plus_linear(A: np.ndarray, dA: np.ndarray | None) -> tuple[CoeffProvider, DiffProvider]:
    def coeffs(i: int, u: np.ndarray) -> np.ndarray:
        base = A[i - 1]
        if dA is None:
            return base.copy()
        return base + np.tensordot(dA[i - 1], u, axes=([2], [0]))

    def diffs(i: int, v: np.ndarray) -> np.ndarray:
        if dA is None:
            return np.zeros_like(A[0])
        return np.tensordot(dA[i - 1], v, axes=([2], [0]))

    return coeffs, diffs


def system_from_dict(doc: dict[str, Any]) -> HyperbolicSystem:
    """Build a system from the JSON layout documented in the README."""
    try:
        builtin = doc.get("builtin")
        if builtin == "euler2d":
            from .euler2d import EulerParams, build_euler

            params = dict(doc.get("params", {}))
            eq = doc.get("equilibrium")
            if eq is not None:
                v0, u1, u0 = (float(x) for x in eq)
                if u1 != 0.0:
                    raise ConfigParse("euler2d equilibrium must have zero tangential velocity")
                params["v0"] = v0
                c0 = float(params.get("c0", 1.0))
                params["M"] = u0 / c0
            system = build_euler(EulerParams(**params))
            if "B" in doc and doc["B"] is not None:
                system = HyperbolicSystem(system.d, system.N, system.m, system.coeffs, np.asarray(doc["B"], float),
                                          system.zetas, system.diffs, system.symmetrizer, system.name, system.meta)
            if "zetas" in doc and doc["zetas"] is not None:
                zetas = np.asarray(doc["zetas"], float)
                system = HyperbolicSystem(system.d, system.N, zetas.shape[0], system.coeffs, system.B, zetas,
                                          system.diffs, system.symmetrizer, system.name, system.meta)
            return system
        if builtin not in (None, "", "none"):
            raise ConfigParse(f"unknown builtin system {builtin!r}")
        d, N, m = int(doc["d"]), int(doc["N"]), int(doc["m"])
        A = np.asarray(doc["A"], dtype=float)
        if A.shape != (d, N, N):
            raise ConfigParse(f"'A' must hold d={d} matrices of size {N}x{N}")
        dA = None
        if doc.get("dA") is not None:
            dA = np.asarray(doc["dA"], dtype=float)
            if dA.shape != (d, N, N, N):
                raise ConfigParse("'dA' must have shape (d, N, N, N)")
        coeffs, diffs = _constant_plus_linear(A, dA)
        S = doc.get("symmetrizer")
        sym = None
        if S is not None:
            S_mat = np.asarray(S, dtype=float)
            sym = lambda u, S_mat=S_mat: S_mat  # noqa: E731
        return HyperbolicSystem(d, N, m, coeffs, np.asarray(doc["B"], float), np.asarray(doc["zetas"], float),
                                diffs, sym, str(doc.get("name", "custom")))
    except ConfigParse:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParse(f"invalid system document: {exc}") from exc
