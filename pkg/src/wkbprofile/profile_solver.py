"""Numerical solution of the decoupled leading-profile systems.

Amplitudes sigma_{lambda, mode}(t, y, x_d) are stored for lambda = 1..L only;
negative harmonics are conjugates, so reality holds by construction and no
zero harmonic exists.  The solvers march in x_d with Heun's method, use
upwind differences in t (zero data for t < 0), centered periodic differences
in y, and dealiased FFT products in the fast phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
import scipy.fft as sfft

from .boundary_spectral import StableDecomposition, evanescent_propagator, restricted_inverse
from .errors import (
    CFLViolation,
    EpsilonTooSmallForGrid,
    GridMismatch,
    InvalidForcing,
    NoContraction,
    PicardDivergence,
    ShockProximity,
    UnboundedCoupling,
)
from .lattice_resonance import ModeKey, ResonanceTable, gamma_base, normalize_direction
from .system_model import LinearizedSystem

DEFAULT_HARMONICS = 16
PICARD_TOL = 1e-8
PICARD_MAX_ITER = 50
MAX_HALVINGS = 6
SHOCK_GUARD = 0.5
COUPLING_GUARD = 1.0


# ----------------------------------------------------------------------------
# grids and fields

@dataclass(frozen=True)
class SlowGrid:
    T: float
    Ly: float
    Xd: float
    nt: int
    ny: int
    nx: int

    def __post_init__(self) -> None:
        if self.nt < 2 or self.nx < 2 or self.ny < 1:
            raise GridMismatch("need nt >= 2, nx >= 2, ny >= 1")
        if self.T <= 0 or self.Ly <= 0 or self.Xd <= 0:
            raise GridMismatch("T, Ly and Xd must be positive")

    @property
    def dt(self) -> float:
        return self.T / (self.nt - 1)

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def dx(self) -> float:
        return self.Xd / (self.nx - 1)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    def halved(self) -> "SlowGrid":
        """Half the time horizon and normal extent on the same spacings."""
        nt = (self.nt - 1) // 2 + 1
        nx = (self.nx - 1) // 2 + 1
        return SlowGrid((nt - 1) * self.dt, self.Ly, (nx - 1) * self.dx, nt, self.ny, nx)

    def check_cfl(self, modes: Iterable[ModeKey], cfl: float = 1.0) -> None:
        for mode in modes:
            a, b = transport_coefficients(mode)
            if a <= 0:
                raise CFLViolation(f"mode {mode.key} is not incoming")
            nu = a * self.dx / self.dt
            if nu > cfl * (1 + 1e-12):
                raise CFLViolation(f"marching number {nu:.3f} exceeds {cfl} for mode {mode.key}")
            if self.ny > 1 and np.max(np.abs(b)) * self.dx / self.dy > cfl * (1 + 1e-12):
                raise CFLViolation(f"tangential marching number exceeds {cfl} for mode {mode.key}")


@dataclass
class ProfileField:
    modes: list[ModeKey]
    harmonics: int
    sigma: np.ndarray          # (n_modes, L, nt, ny, nx), lambda = 1..L
    grid: SlowGrid
    reality: bool = True

    @classmethod
    def zeros(cls, modes: list[ModeKey], harmonics: int, grid: SlowGrid, reality: bool = True) -> "ProfileField":
        sigma = np.zeros((len(modes), harmonics, grid.nt, grid.ny, grid.nx), complex)
        return cls(list(modes), harmonics, sigma, grid, reality)

    def harmonic(self, k: int, lam: int) -> np.ndarray:
        """sigma_{lam} for any nonzero lam; conjugate symmetry supplies lam < 0."""
        if lam == 0:
            raise ValueError("no zero harmonic is stored")
        if abs(lam) > self.harmonics:
            return np.zeros(self.sigma.shape[2:], complex)
        s = self.sigma[k, abs(lam) - 1]
        if lam > 0:
            return s
        return np.conj(s) if self.reality else np.zeros_like(s)

    def slab(self, i: int) -> np.ndarray:
        return self.sigma[..., i]


def transport_coefficients(mode: ModeKey) -> tuple[float, np.ndarray]:
    """(alpha, beta) with X = d_x + alpha d_t + beta . grad_y for the mode."""
    dxi = mode.dxitau
    return -1.0 / dxi, mode.grad[:-1] / dxi


# ----------------------------------------------------------------------------
# discrete operators

def upwind_t(u: np.ndarray, dt: float, axis: int) -> np.ndarray:
    """Backward difference along t with a zero ghost value before t = 0."""
    d = np.empty_like(u)
    sl = [slice(None)] * u.ndim
    sl0 = list(sl)
    sl0[axis] = slice(0, 1)
    sl1 = list(sl)
    sl1[axis] = slice(1, None)
    slm = list(sl)
    slm[axis] = slice(None, -1)
    d[tuple(sl0)] = u[tuple(sl0)]
    d[tuple(sl1)] = u[tuple(sl1)] - u[tuple(slm)]
    return d / dt


def centered_y(u: np.ndarray, dy: float, axis: int) -> np.ndarray:
    if u.shape[axis] == 1:
        return np.zeros_like(u)
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * dy)


def fft_size(harmonics: int) -> int:
    need = 3 * harmonics + 1
    return 1 << (need - 1).bit_length()


def _to_physical(coef: np.ndarray, M: int) -> np.ndarray:
    """Real values on M phase points (last axis) from positive harmonics on axis 0."""
    L = coef.shape[0]
    full = np.zeros(coef.shape[1:] + (M // 2 + 1,), complex)
    full[..., 1:L + 1] = np.moveaxis(coef, 0, -1)
    return sfft.irfft(full, n=M, axis=-1) * M


def _to_harmonics(vals: np.ndarray, L: int) -> np.ndarray:
    M = vals.shape[-1]
    return np.moveaxis(sfft.rfft(vals, axis=-1)[..., 1:L + 1], -1, 0) / M


def dealiased_product(a: np.ndarray, b: np.ndarray, M: int | None = None) -> np.ndarray:
    """Positive harmonics of the product of two real band-limited phase functions."""
    L = a.shape[0]
    M = M or fft_size(L)
    return _to_harmonics(_to_physical(a, M) * _to_physical(b, M), L)


def zero_mode_of_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean of the product of two real phase functions given positive harmonics."""
    return 2.0 * np.real(np.sum(a * np.conj(b), axis=0))


# ----------------------------------------------------------------------------
# boundary traces

@dataclass
class BoundaryForcing:
    """G_n(t, y) as complex (p, nt, ny) arrays keyed by n with positive scale."""
    G: dict[tuple[int, ...], np.ndarray]
    grid: SlowGrid

    def __post_init__(self) -> None:
        clean = {}
        for n, g in self.G.items():
            n = tuple(int(v) for v in n)
            _, lam = normalize_direction(n)
            g = np.asarray(g, complex)
            if lam < 0:
                n = tuple(-v for v in n)
                g = np.conj(g)
            if n in clean:
                raise InvalidForcing(f"forcing given twice for +-{n}")
            if g.shape[1:] != (self.grid.nt, self.grid.ny):
                raise GridMismatch(f"G_{n} has shape {g.shape}, expected (p, {self.grid.nt}, {self.grid.ny})")
            clean[n] = g
        self.G = clean

    def norm2(self) -> float:
        """Discrete L2 norm squared of G over omega_T x T^m (positive and negative n)."""
        g = self.grid
        return float(sum(2.0 * np.sum(np.abs(v) ** 2) for v in self.G.values()) * g.dt * g.dy)

    def check_y_support(self, tol: float = 1e-8) -> None:
        for n, v in self.G.items():
            peak = np.max(np.abs(v))
            if peak == 0:
                continue
            edge = max(np.max(np.abs(v[..., 0])), np.max(np.abs(v[..., -1])))
            if edge > tol * peak:
                raise InvalidForcing(f"forcing G_{n} is not supported away from the periodic y-wrap")


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity transition: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)

    def f(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    a, b = f(s), f(1.0 - s)
    return a / (a + b)


def bump(s: np.ndarray) -> np.ndarray:
    """C-infinity bump supported in (0, 1) with peak 1 at s = 1/2."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    u = 2.0 * s[inside] - 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u * u))
    return out


def gaussian_forcing(grid: SlowGrid, specs: list[dict], p: int) -> BoundaryForcing:
    """Forcing from specs {"n": [...], "amplitude": [...p entries...], "t_center", "t_width",
    "y_center", "y_width", "t_on"}: a Gaussian in (t, y) switched on smoothly after t = 0."""
    t, y = grid.t, grid.y
    G: dict = {}
    for spec in specs:
        amp = np.asarray(spec.get("amplitude", [1.0] * p), dtype=complex)
        if amp.shape != (p,):
            raise InvalidForcing(f"forcing amplitude must have {p} entries")
        tc = float(spec.get("t_center", 0.5 * grid.T))
        tw = float(spec.get("t_width", 0.1 * grid.T))
        yc = float(spec.get("y_center", 0.5 * grid.Ly))
        yw = float(spec.get("y_width", 0.08 * grid.Ly))
        t_on = float(spec.get("t_on", 0.1 * grid.T))
        prof_t = np.exp(-(((t - tc) / tw) ** 2)) * smooth_step(t / t_on)
        prof_y = np.exp(-(((y - yc) / yw) ** 2))
        G[tuple(spec["n"])] = amp[:, None, None] * np.outer(prof_t, prof_y)[None]
    return BoundaryForcing(G, grid)


@dataclass
class Traces:
    w: dict                      # n -> (N, nt, ny): (B restricted to E_-)^{-1} G_n
    osc: dict                    # mode key -> (L, nt, ny) harmonic traces
    ev: dict                     # n -> (N, nt, ny): elliptic-stable part of w_n
    incoming_parts: dict         # n -> {mode key: (N, nt, ny)}
    modes: dict                  # mode key -> ModeKey

    def split(self, resonant_keys: set) -> tuple[dict, dict]:
        res = {k: v for k, v in self.osc.items() if k in resonant_keys}
        non = {k: v for k, v in self.osc.items() if k not in resonant_keys}
        return res, non

    def energy(self, grid: SlowGrid) -> float:
        """||H_osc||^2 + sum ||h||^2 + ||H_ev||^2 with conjugate harmonics counted."""
        w = grid.dt * grid.dy
        tot = sum(2.0 * np.sum(np.abs(v) ** 2) for v in self.osc.values())
        tot += sum(2.0 * np.sum(np.abs(v) ** 2) for v in self.ev.values())
        return float(tot * w)


def boundary_traces(dec_provider: Callable[[tuple[int, ...]], tuple[StableDecomposition, list[ModeKey]]],
                    B: np.ndarray, G: BoundaryForcing, harmonics: int) -> Traces:
    """Split each G_n into incoming polarizations and the elliptic-stable trace.

    ``dec_provider(n0)`` returns the decomposition at n0.zeta and the lifted
    modes of n0 (root index order).  Projectors and E_- are homogeneous of
    degree 0, so the canonical direction serves every positive multiple.
    """
    w_all, osc, ev, parts, modes = {}, {}, {}, {}, {}
    for n, g in sorted(G.G.items()):
        n0, lam = normalize_direction(n)
        if lam > harmonics:
            raise InvalidForcing(f"forcing harmonic {lam} of {n0} exceeds the truncation {harmonics}")
        dec, lifted = dec_provider(n0)
        K = restricted_inverse(dec, B)
        w = np.einsum("ab,btj->atj", K, g)
        w_all[n] = w
        ev[n] = np.einsum("ab,btj->atj", dec.projectors["elliptic_minus"], w)
        real_idx = [j for j, r in enumerate(dec.roots) if r.cls in ("incoming", "outgoing")]
        parts[n] = {}
        for mode in lifted:
            if mode.cls != "incoming":
                continue
            j = real_idx[mode.root_index]
            comp = np.einsum("ab,btj->atj", dec.projectors["incoming"][j], w)
            parts[n][mode.key] = comp
            modes[mode.key] = mode
            h = np.einsum("a,atj->tj", mode.E, comp)
            arr = osc.setdefault(mode.key, np.zeros((harmonics,) + g.shape[1:], complex))
            arr[lam - 1] += h
    return Traces(w_all, osc, ev, parts, modes)


# ----------------------------------------------------------------------------
# cutoff

def cutoff_beta(T: float, Vstar: float) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth cutoff equal to 1 on [0, V*T] and 0 on [2 V*T, inf)."""
    a = Vstar * T

    def beta(x):
        x = np.asarray(x, dtype=float)
        return 1.0 - smooth_step((x - a) / a)

    return beta


# ----------------------------------------------------------------------------
# Burgers equation for one non-resonant mode

def burgers_characteristics_oracle(amplitude: Callable, wave: Callable, wave_prime: Callable, alpha: float,
                                   beta: np.ndarray, gamma: float, t: np.ndarray, y: np.ndarray, x: float,
                                   theta: np.ndarray, Ly: float, tol: float = 1e-14,
                                   max_iter: int = 50) -> np.ndarray:
    """Method of characteristics for boundary data h(t, y, Theta) = amplitude(t, y) wave(Theta).

    S is constant along dt/dx = alpha, dy/dx = beta, dTheta/dx = gamma S, so
    S = h(t - alpha x, y - beta x, Theta - gamma S x), solved by Newton.
    Returns S indexed (t, y, theta).
    """
    beta = float(np.atleast_1d(beta)[0]) if np.size(beta) else 0.0
    A = amplitude((t - alpha * x)[:, None], np.mod(y - beta * x, Ly)[None, :])[..., None]
    th = np.asarray(theta, float)[None, None, :]
    S = A * wave(th)
    for _ in range(max_iter):
        arg = th - gamma * x * S
        F = S - A * wave(arg)
        step = F / (1.0 + gamma * x * A * wave_prime(arg))
        S = S - step
        if np.max(np.abs(step)) <= tol * max(1.0, float(np.max(np.abs(S)))):
            break
    else:
        raise PicardDivergence("characteristics oracle did not converge; the data is past its shock")
    return S


def oracle_harmonics(S: np.ndarray, harmonics: int) -> np.ndarray:
    """Positive Theta-harmonics (L, ...) of samples on a uniform Theta grid (last axis)."""
    return _to_harmonics(S, harmonics)


def _transport(U: np.ndarray, alpha: float, beta: np.ndarray, grid: SlowGrid) -> np.ndarray:
    out = -alpha * upwind_t(U, grid.dt, axis=-2)
    if grid.ny > 1 and np.size(beta) and beta[0] != 0.0:
        out -= beta[0] * centered_y(U, grid.dy, axis=-1)
    return out


def solve_burgers_mode(mode: ModeKey, gamma_self: complex, h: np.ndarray, grid: SlowGrid,
                       harmonics: int = DEFAULT_HARMONICS, picard_tol: float = PICARD_TOL,
                       max_iter: int = PICARD_MAX_ITER, store: bool = True,
                       on_slab: Callable[[int, np.ndarray], None] | None = None,
                       shock_guard: float = SHOCK_GUARD) -> ProfileField | None:
    """Solve X S + Gamma S d_theta S = 0 with S = h at x_d = 0.

    ``h`` holds the positive Theta-harmonics (L, nt, ny) of the boundary data.
    Each Heun step treats the product as W d_theta S with the coefficient W
    at the new slab updated by fixed-point iteration.  With ``store=False``
    slabs are only passed to ``on_slab(i, sigma_i)``.
    """
    L = harmonics
    h = np.asarray(h, complex)
    if h.shape != (L, grid.nt, grid.ny):
        raise GridMismatch(f"boundary data has shape {h.shape}, expected ({L}, {grid.nt}, {grid.ny})")
    grid.check_cfl([mode])
    alpha, beta = transport_coefficients(mode)
    g = complex(gamma_self)
    if abs(g.imag) < 1e-14 * max(1.0, abs(g)):
        g = g.real
    mult = (1j * np.arange(1, L + 1) * g)[:, None, None]
    M = fft_size(L)
    dx = grid.dx
    field = ProfileField.zeros([mode], L, grid) if store else None

    def emit(i, U):
        if field is not None:
            field.sigma[0, :, :, :, i] = U
        if on_slab is not None:
            on_slab(i, U)

    U = h.copy()
    emit(0, U)
    prev = U
    for i in range(grid.nx - 1):
        remaining = grid.Xd - i * dx
        if g == 0:
            k1 = _transport(U, alpha, beta, grid)
            Ustar = U + dx * k1
            Unew = U + 0.5 * dx * (k1 + _transport(Ustar, alpha, beta, grid))
        else:
            if L * np.max(np.abs(U)) * abs(g) * remaining > shock_guard:
                raise ShockProximity(f"gradient guard tripped at x_d = {i * dx:.4g}")
            k1 = _transport(U, alpha, beta, grid) - _to_harmonics(
                _to_physical(U, M) * _to_physical(mult * U, M), L)
            Ustar = U + dx * k1
            base = U + 0.5 * dx * (k1 + _transport(Ustar, alpha, beta, grid))
            dstar = _to_physical(mult * Ustar, M)
            W = 2.0 * U - prev if i > 0 else Ustar
            for _ in range(max_iter):
                Unew = base - 0.5 * dx * _to_harmonics(_to_physical(W, M) * dstar, L)
                upd = np.linalg.norm(Unew - W) / max(np.linalg.norm(Unew), 1e-300)
                W = Unew
                if upd <= picard_tol:
                    break
            else:
                raise PicardDivergence(f"coefficient iteration did not converge at x_d = {(i + 1) * dx:.4g}")
        prev, U = U, Unew
        emit(i + 1, U)
    return field


# ----------------------------------------------------------------------------
# coupled resonant system

def _self_rhs(W: np.ndarray, U: np.ndarray, mult: np.ndarray, M: int) -> np.ndarray:
    """Positive harmonics of W * (D U) where D has symbol mult[lambda-1] on harmonic lambda."""
    return dealiased_product(W, mult[:, None, None] * U, M)


@dataclass
class CouplingSet:
    """Gathered interaction terms for a closed set of resonant modes."""
    modes: list[ModeKey]
    harmonics: int
    self_mult: np.ndarray        # (n_modes, L) symbols of the self-interaction derivative
    target: np.ndarray           # mode index receiving the term
    lam: np.ndarray              # harmonic index (1..L) of the target
    p_idx: np.ndarray
    p_lam: np.ndarray            # signed harmonic of the undifferentiated factor
    q_idx: np.ndarray
    q_lam: np.ndarray            # signed harmonic of the differentiated factor
    coef: np.ndarray             # complex coefficients (include the factor i)
    defects: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_self: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def restricted(self, L: int) -> "CouplingSet":
        keep = (self.lam <= L) & (np.abs(self.p_lam) <= L) & (np.abs(self.q_lam) <= L)
        return replace(self, harmonics=L, self_mult=self.self_mult[:, :L], target=self.target[keep],
                       lam=self.lam[keep], p_idx=self.p_idx[keep], p_lam=self.p_lam[keep],
                       q_idx=self.q_idx[keep], q_lam=self.q_lam[keep], coef=self.coef[keep])


def _fd_symbol(k: np.ndarray, n0: np.ndarray, h: float) -> np.ndarray:
    """sin(k n0_j h)/h per boundary phase j; shape (len(k), m)."""
    return np.sin(np.outer(k, n0) * h) / h


def build_coupling(lin: LinearizedSystem, modes: list[ModeKey], table: ResonanceTable | None, harmonics: int,
                   use_skew_fd: bool = False, h_fd: float = 1e-3) -> CouplingSet:
    """Collect self and resonance terms among ``modes``; resonances leaving the set are dropped."""
    L = harmonics
    idx = {m.key: i for i, m in enumerate(modes)}
    lam = np.arange(1, L + 1)
    zetas = lin.zetas
    self_mult = np.zeros((len(modes), L), complex)
    gself = np.zeros(len(modes), complex)
    for i, m in enumerate(modes):
        g, _ = gamma_base(lin, m.E, m.zeta, m.E, m.pitilde, m.E)
        gself[i] = g
        if use_skew_fd:
            gj = np.array([gamma_base(lin, m.E, zetas[j], m.E, m.pitilde, m.E)[0] for j in range(lin.m)])
            self_mult[i] = 1j * (_fd_symbol(lam, np.asarray(m.n0, float), h_fd) @ gj)
        else:
            self_mult[i] = 1j * lam * g
    rows = []
    defects = []
    if table is not None and len(table):
        for i in table.non_self():
            p, q, r = table.modes[table.ip[i]], table.modes[table.iq[i]], table.modes[table.ir[i]]
            if p.key not in idx or q.key not in idx or r.key not in idx:
                continue
            lp, lq, lr = int(table.lp[i]), int(table.lq[i]), int(table.lr[i])
            base = complex(table.gamma_pq[i]) / lq
            defects.append(float(table.defect[i]))
            if use_skew_fd:
                gj = np.array([gamma_base(lin, p.E, zetas[j], q.E, r.pitilde, r.E)[0] for j in range(lin.m)])
            for ell in range(1, L // lr + 1):
                if abs(ell * lp) > L or abs(ell * lq) > L:
                    continue
                if use_skew_fd:
                    c = 1j * (_fd_symbol(np.array([ell * lq]), np.asarray(q.n0, float), h_fd)[0] @ gj)
                else:
                    c = 1j * ell * lq * base
                rows.append((idx[r.key], ell * lr, idx[p.key], ell * lp, idx[q.key], ell * lq, c))
    if rows:
        arr = list(zip(*rows))
        target, lam_r, pi, pl, qi, ql = (np.array(a, dtype=np.int64) for a in arr[:6])
        coef = np.array(arr[6], complex)
    else:
        target = lam_r = pi = pl = qi = ql = np.zeros(0, np.int64)
        coef = np.zeros(0, complex)
    return CouplingSet(list(modes), L, self_mult, target, lam_r, pi, pl, qi, ql, coef, np.array(defects), gself)


def _signed(U: np.ndarray, idx: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Gather harmonics U[idx, |lam|-1] with conjugation for negative lam."""
    vals = U[idx, np.abs(lam) - 1]
    neg = lam < 0
    if np.any(neg):
        vals[neg] = np.conj(vals[neg])
    return vals


def coupling_terms(cs: CouplingSet, V: np.ndarray, U: np.ndarray, M: int | None = None) -> np.ndarray:
    """Quadratic interaction terms (self plus resonances), V undifferentiated, U differentiated.

    V, U: (n_modes, L, nt, ny) slabs.  Returns the same shape.
    """
    L = cs.harmonics
    M = M or fft_size(L)
    out = np.zeros_like(U)
    for k in range(len(cs.modes)):
        if np.any(cs.self_mult[k]):
            out[k] += _self_rhs(V[k], U[k], cs.self_mult[k], M)
    if cs.coef.size:
        prod = cs.coef[:, None, None] * _signed(V, cs.p_idx, cs.p_lam) * _signed(U, cs.q_idx, cs.q_lam)
        np.add.at(out, (cs.target, cs.lam - 1), prod)
    return out


def quadratic_energy_rate(cs: CouplingSet, U: np.ndarray, weight: float = 1.0) -> float:
    """Contribution of the interaction terms to d/dx_d of sum |sigma|^2 (both signs of lambda)."""
    Q = -coupling_terms(cs, U, U)
    return float(2.0 * 2.0 * np.real(np.sum(np.conj(U) * Q)) * weight)


def zero_harmonic_source(cs: CouplingSet, U: np.ndarray) -> np.ndarray:
    """Would-be lambda = 0 value of the self-interaction sums, per mode; vanishes by antisymmetry."""
    L = cs.harmonics
    lam = np.arange(1, L + 1)
    out = []
    for k in range(len(cs.modes)):
        g = cs.self_mult[k] / (1j * lam) if np.any(cs.self_mult[k]) else np.zeros(L)
        # sum over l1 + l2 = 0 of i l2 Gamma U_{l1} U_{l2}, split into l2 > 0 and l2 < 0
        pos = np.sum(1j * lam[:, None, None] * g[:, None, None] * np.conj(U[k]) * U[k], axis=0)
        neg = np.sum(-1j * lam[:, None, None] * np.conj(g[:, None, None]) * U[k] * np.conj(U[k]), axis=0)
        out.append(pos + neg)
    return np.array(out)


def solve_linearized_resonant(V: ProfileField | None, F: ProfileField | None, H: np.ndarray, cs: CouplingSet,
                              grid: SlowGrid, Vstar: float | None = None, store: bool = True,
                              on_slab: Callable[[int, np.ndarray], None] | None = None,
                              coupling_guard: float = COUPLING_GUARD, enforce_extent: bool = True) -> ProfileField:
    """March the resonant system linearized at V with source F and boundary traces H.

    Transport is exact per mode; the cutoff beta_T(x_d)^2 multiplies the
    interaction terms.  ``H`` has shape (n_modes, L, nt, ny).
    """
    L = cs.harmonics
    modes = cs.modes
    n = len(modes)
    if H.shape != (n, L, grid.nt, grid.ny):
        raise GridMismatch(f"trace array has shape {H.shape}, expected {(n, L, grid.nt, grid.ny)}")
    for other in (V, F):
        if other is not None and (other.sigma.shape != (n, L, grid.nt, grid.ny, grid.nx)):
            raise GridMismatch("coefficient/source field does not match the grid")
    grid.check_cfl(modes)
    if Vstar is not None and enforce_extent and grid.Xd < 2 * Vstar * grid.T * (1 - 1e-12):
        raise GridMismatch(f"normal extent {grid.Xd} is below 2 V* T = {2 * Vstar * grid.T}")
    beta_T = cutoff_beta(grid.T, Vstar) if Vstar is not None else (lambda x: np.ones_like(np.asarray(x, float)))
    coeffs = [transport_coefficients(m) for m in modes]
    M = fft_size(L)
    dx = grid.dx
    x = grid.x
    field = ProfileField.zeros(modes, L, grid) if store else None

    if V is not None and cs.coef.size:
        vmax = float(np.max(np.abs(V.sigma)))
        norm = np.zeros((n, L))
        np.add.at(norm, (cs.target, cs.lam - 1), np.abs(cs.coef))
        if dx * vmax * float(np.max(norm)) > coupling_guard:
            raise UnboundedCoupling("interaction operator norm per step exceeds the stability guard")

    def transport(U):
        out = np.empty_like(U)
        for k, (a, b) in enumerate(coeffs):
            out[k] = _transport(U[k], a, b, grid)
        return out

    def rhs(U, i_x: float, Vs, Fs):
        out = transport(U)
        if Vs is not None:
            out -= float(beta_T(i_x)) ** 2 * coupling_terms(cs, Vs, U, M)
        if Fs is not None:
            out += Fs
        return out

    U = H.astype(complex).copy()
    if field is not None:
        field.sigma[..., 0] = U
    if on_slab is not None:
        on_slab(0, U)
    for i in range(grid.nx - 1):
        V0 = V.sigma[..., i] if V is not None else None
        V1 = V.sigma[..., i + 1] if V is not None else None
        F0 = F.sigma[..., i] if F is not None else None
        F1 = F.sigma[..., i + 1] if F is not None else None
        k1 = rhs(U, x[i], V0, F0)
        Ustar = U + dx * k1
        k2 = rhs(Ustar, x[i + 1], V1, F1)
        U = U + 0.5 * dx * (k1 + k2)
        if field is not None:
            field.sigma[..., i + 1] = U
        if on_slab is not None:
            on_slab(i + 1, U)
    return field


@dataclass
class PicardResult:
    field: ProfileField
    updates: list[float]
    iterations: int
    halvings: int
    grid: SlowGrid


def _constant_extension(H: np.ndarray, grid: SlowGrid, modes: list[ModeKey]) -> ProfileField:
    f = ProfileField.zeros(modes, H.shape[1], grid)
    f.sigma[...] = H[..., None]
    return f


def solve_resonant_system(H: np.ndarray, cs: CouplingSet, grid: SlowGrid, Vstar: float | None = None,
                          picard_tol: float = PICARD_TOL, max_iter: int = PICARD_MAX_ITER,
                          max_halvings: int = MAX_HALVINGS, enforce_extent: bool = True) -> PicardResult:
    """Fixed point of the linearized march, started from the boundary trace.

    Contraction is monitored in the discrete L2 norm.  On divergence the
    horizon is halved (same spacings) and the trace restricted.
    """
    halvings = 0
    while True:
        try:
            return _picard(H, cs, grid, Vstar, picard_tol, max_iter, enforce_extent, halvings)
        except (PicardDivergence, UnboundedCoupling) as exc:
            if halvings >= max_halvings:
                raise NoContraction(f"no contraction after {halvings} halvings: {exc}") from exc
            grid = grid.halved()
            H = H[:, :, :grid.nt]
            halvings += 1


def _picard(H, cs, grid, Vstar, tol, max_iter, enforce_extent, halvings) -> PicardResult:
    U = _constant_extension(H, grid, cs.modes)
    updates: list[float] = []
    if not np.any(H):
        return PicardResult(ProfileField.zeros(cs.modes, cs.harmonics, grid), [0.0], 0, halvings, grid)
    for it in range(1, max_iter + 1):
        new = solve_linearized_resonant(U, None, H, cs, grid, Vstar, enforce_extent=enforce_extent)
        upd = float(np.linalg.norm(new.sigma - U.sigma) / max(np.linalg.norm(new.sigma), 1e-300))
        updates.append(upd)
        U = new
        if upd <= tol:
            return PicardResult(U, updates, it, halvings, grid)
        if len(updates) >= 3 and updates[-1] > updates[-2] > updates[-3]:
            raise PicardDivergence(f"Picard updates grow: {updates[-3:]}")
    raise PicardDivergence(f"Picard did not reach {tol} in {max_iter} iterations")


# ----------------------------------------------------------------------------
# diagnostics

def incoming_inner_product(U: ProfileField, V: ProfileField, x_index: int) -> float:
    """(2 pi)^m sum over modes and harmonics of discrete L2(omega_T) inner products at x_d."""
    if U.sigma.shape != V.sigma.shape or U.grid != V.grid:
        raise GridMismatch("fields live on different grids or mode sets")
    if [m.key for m in U.modes] != [m.key for m in V.modes]:
        raise GridMismatch("fields carry different mode sets")
    g = U.grid
    m = len(U.modes[0].n0) if U.modes else 0
    s = np.sum(np.conj(U.sigma[..., x_index]) * V.sigma[..., x_index]) * g.dt * g.dy
    factor = 2.0 if (U.reality and V.reality) else 1.0
    val = factor * np.real(s) if factor == 2.0 else np.real(s)
    return float((2 * np.pi) ** m * val)


def slab_energy(U: np.ndarray, grid: SlowGrid, m: int, reality: bool = True) -> float:
    factor = 2.0 if reality else 1.0
    return float((2 * np.pi) ** m * factor * np.sum(np.abs(U) ** 2) * grid.dt * grid.dy)


def finite_speed_check(U: ProfileField, Vstar: float, tol: float = 1e-8) -> dict:
    g = U.grid
    t, x = g.t, g.x
    outside = x[None, :] > Vstar * t[:, None] + 2 * g.dx     # (nt, nx)
    mass = np.sum(np.abs(U.sigma) ** 2, axis=(0, 1, 3))        # (nt, nx)
    total = float(np.sum(mass))
    leak = float(np.sum(mass[outside]))
    ratio = leak / total if total > 0 else 0.0
    return {"leakage": ratio, "tolerance": tol, "pass": bool(ratio <= tol)}


def energy_diagnostic(U: ProfileField, V: ProfileField | None, F: ProfileField | None) -> dict:
    """Smallest C with d/dx_d <U,U> <= C <F,F> + C (1 + |V|) <U,U> on every slab."""
    g = U.grid
    m = len(U.modes[0].n0) if U.modes else 0
    EU = np.array([slab_energy(U.sigma[..., i], g, m) for i in range(g.nx)])
    EF = np.array([slab_energy(F.sigma[..., i], g, m) for i in range(g.nx)]) if F is not None else np.zeros(g.nx)
    vinf = float(np.max(np.abs(V.sigma))) if V is not None else 0.0
    D = np.diff(EU) / g.dx
    denom = 0.5 * (EF[1:] + EF[:-1]) + (1.0 + vinf) * 0.5 * (EU[1:] + EU[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, np.maximum(D, 0.0) / denom, np.where(D > 0, np.inf, 0.0))
    C = float(np.max(ratio)) if ratio.size else 0.0
    return {"C": C, "energy": EU.tolist(), "derivative": D.tolist(), "V_sup": vinf, "pass": bool(np.isfinite(C))}


# ----------------------------------------------------------------------------
# evanescent part

@dataclass
class EvanescentField:
    directions: dict            # n -> (StableDecomposition of n0, lambda)
    traces: dict                # n -> (N, nt, ny)
    chi: Callable[[np.ndarray], np.ndarray]
    psi: np.ndarray
    grid: SlowGrid

    def value(self, n: tuple[int, ...], psi: float, x_index: int = 0) -> np.ndarray:
        dec, lam = self.directions[n]
        P = evanescent_propagator(dec, lam * psi)
        return float(self.chi(self.grid.x[x_index])) * np.einsum("ab,btj->atj", P, self.traces[n])

    def norm_profile(self, n: tuple[int, ...], x_index: int = 0) -> np.ndarray:
        return np.array([np.linalg.norm(self.value(n, s, x_index)) for s in self.psi])

    def decay_report(self, tol: float = 0.05) -> dict:
        out = {}
        for n, (dec, lam) in self.directions.items():
            mu = lam * dec.decay_rate
            norms = self.norm_profile(n)
            if not np.isfinite(mu) or norms[0] == 0:
                out[n] = {"mu": None, "fitted": None, "pass": True}
                continue
            good = norms > 0
            fitted = -np.polyfit(self.psi[good], np.log(norms[good]), 1)[0]
            out[n] = {"mu": float(mu), "fitted": float(fitted), "pass": bool(fitted >= mu * (1 - tol))}
        return out


def assemble_evanescent(G: BoundaryForcing, dec_provider: Callable, B: np.ndarray, chi_support: float,
                        psi: np.ndarray) -> EvanescentField:
    """chi(x_d) exp(psi_d A(n.zeta)) Pi^e (B restricted to E_-)^{-1} G_n for each forced n."""
    dirs, traces = {}, {}
    for n, g in sorted(G.G.items()):
        n0, lam = normalize_direction(n)
        dec = dec_provider(n0)[0]
        K = restricted_inverse(dec, B)
        traces[n] = np.einsum("ab,bc,ctj->atj", dec.projectors["elliptic_minus"], K, g)
        dirs[n] = (dec, lam)

    def chi(x):
        return 1.0 - smooth_step(np.asarray(x, float) / chi_support - 1.0)

    return EvanescentField(dirs, traces, chi, np.asarray(psi, float), G.grid)


# ----------------------------------------------------------------------------
# leading profile

def assemble_leading_profile(fields: list[ProfileField], evanescent: EvanescentField | None, epsilon: float,
                             zetas: np.ndarray, x_indices: Iterable[int] | None = None,
                             aliasing_guard: float | None = np.pi) -> np.ndarray:
    """Sample u = eps U(z, z'.zeta/eps, x_d/eps) on the slow grid; returns (N, nt, ny, nx_sel).

    The guard rejects epsilon for which the fast phase advances more than
    ``aliasing_guard`` radians between neighbouring samples; pass None for
    pointwise use where aliasing of the sampled field is irrelevant.
    """
    grids = {f.grid for f in fields}
    if evanescent is not None:
        grids.add(evanescent.grid)
    if len(grids) != 1:
        raise GridMismatch("all parts must share one slow grid")
    grid = grids.pop()
    xs = list(range(grid.nx)) if x_indices is None else list(x_indices)
    t, y, x = grid.t, grid.y, grid.x
    N = fields[0].modes[0].E.size if fields and fields[0].modes else next(iter(evanescent.traces.values())).shape[0]
    out = np.zeros((N, grid.nt, grid.ny, len(xs)))
    for f in fields:
        for k, mode in enumerate(f.modes):
            tau, eta = mode.zeta[0], mode.zeta[1:]
            L = f.harmonics
            step = L * max(abs(tau) * grid.dt, float(np.max(np.abs(eta))) * grid.dy if grid.ny > 1 else 0.0,
                           abs(mode.xi0) * grid.dx if len(xs) > 1 else 0.0) / epsilon
            if aliasing_guard is not None and step > aliasing_guard:
                raise EpsilonTooSmallForGrid(f"phase step {step:.3g} exceeds the aliasing guard")
            phase_z = (tau * t[:, None] + (eta[0] * y[None, :] if eta.size else 0.0)) / epsilon
            for j, ix in enumerate(xs):
                ph = phase_z + mode.xi0 * x[ix] / epsilon
                acc = np.zeros((grid.nt, grid.ny), complex)
                for lam in range(1, L + 1):
                    acc += f.sigma[k, lam - 1, :, :, ix] * np.exp(1j * lam * ph)
                scal = 2.0 * acc.real if f.reality else acc.real
                out[:, :, :, j] += mode.E[:, None, None] * scal[None]
    if evanescent is not None:
        for n, (dec, lam) in evanescent.directions.items():
            zeta = np.asarray(n, float) @ zetas
            phase_z = (zeta[0] * t[:, None] + zeta[1] * y[None, :]) / epsilon
            for j, ix in enumerate(xs):
                v = evanescent.value(n, x[ix] / epsilon, ix)
                out[:, :, :, j] += 2.0 * np.real(v * np.exp(1j * phase_z)[None])
    return epsilon * out


def boundary_residual(u0: np.ndarray, B: np.ndarray, G: BoundaryForcing, zetas: np.ndarray, epsilon: float) -> float:
    """max |B u(., x_d = 0) - eps g^eps| / eps with g^eps = sum_n G_n e^{i n.theta} + c.c."""
    grid = G.grid
    t, y = grid.t, grid.y
    g = np.zeros((B.shape[0], grid.nt, grid.ny))
    for n, Gn in G.G.items():
        zeta = np.asarray(n, float) @ zetas
        ph = (zeta[0] * t[:, None] + zeta[1] * y[None, :]) / epsilon
        g += 2.0 * np.real(Gn * np.exp(1j * ph)[None])
    Bu = np.einsum("ab,btj->atj", B, u0)
    return float(np.max(np.abs(Bu - epsilon * g)) / epsilon)
