"""Built-in 2D isentropic Euler system in (volume, velocity) variables with
closed-form spectral data, used as the oracle layer for the generic modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExactGlancing, ParameterOutOfRange, ZeroFrequency
from .system_model import HyperbolicSystem

EXACT_GLANCING_RTOL = 1e-10


@dataclass(frozen=True)
class EulerParams:
    v0: float = 1.0
    c0: float = 1.0
    M: float = math.sqrt(3.0) / 2.0
    eta0: float = 1.0
    delta: float = 2.0 ** (1.0 / 7.0)
    kappa: float = 1.0

    @property
    def u0(self) -> float:
        return self.M * self.c0

    @property
    def cprime0(self) -> float:
        return -self.kappa * self.c0 / self.v0

    @property
    def s(self) -> float:
        """Slope of the glancing lines |tau| = s |eta|."""
        return math.sqrt(self.c0**2 - self.u0**2)

    @property
    def equilibrium(self) -> np.ndarray:
        return np.array([self.v0, 0.0, self.u0])

    def validate(self, strict: bool = True) -> None:
        if self.v0 <= 0 or self.c0 <= 0 or self.eta0 <= 0:
            raise ParameterOutOfRange("v0, c0 and eta0 must be positive")
        if self.delta <= 1:
            raise ParameterOutOfRange("delta must exceed 1")
        if self.M <= 0:
            raise ParameterOutOfRange("the normal velocity must be positive (incoming flow)")
        if strict and self.M >= 1:
            raise ParameterOutOfRange("the flow must be subsonic (0 < u0 < c0)")

    def sound_speed(self, v: float) -> float:
        return self.c0 * (self.v0 / v) ** self.kappa


def build_euler(params: EulerParams = EulerParams(), strict: bool = True) -> HyperbolicSystem:
    params.validate(strict)
    V0 = params.equilibrium
    v0, u0, c0, eta0 = params.v0, params.u0, params.c0, params.eta0
    # derivative of c(v)^2 / v at v0
    k = (2.0 * c0 * params.cprime0 * v0 - c0**2) / v0**2

    def coeffs(i: int, u: np.ndarray) -> np.ndarray:
        v, u1, u2 = V0 + u
        c2v = params.sound_speed(v) ** 2 / v
        if i == 1:
            return np.array([[u1, -v, 0.0], [-c2v, u1, 0.0], [0.0, 0.0, u1]])
        return np.array([[u2, 0.0, -v], [0.0, u2, 0.0], [-c2v, 0.0, u2]])

    def diffs(i: int, w: np.ndarray) -> np.ndarray:
        wv, w1, w2 = w
        if i == 1:
            return np.array([[w1, -wv, 0.0], [-k * wv, w1, 0.0], [0.0, 0.0, w1]])
        return np.array([[w2, 0.0, -wv], [0.0, w2, 0.0], [-k * wv, 0.0, w2]])

    def symmetrizer(u: np.ndarray) -> np.ndarray:
        v = (V0 + u)[0]
        return np.diag([params.sound_speed(v) ** 2, v**2, v**2])

    B = np.array([[0.0, v0, 0.0], [-u0, 0.0, v0]])
    zetas = np.array([[c0 * eta0, eta0], [c0 * params.delta * eta0, eta0]])
    return HyperbolicSystem(2, 3, 2, coeffs, B, zetas, diffs, symmetrizer, "euler2d", {"params": params})


def lattice_zeta(params: EulerParams, p: int, q: int) -> tuple[float, float]:
    """zeta_{p,q} = p zeta^1 + q zeta^delta."""
    return params.c0 * (p + params.delta * q) * params.eta0, (p + q) * params.eta0


def closed_form_tau(params: EulerParams, eta: float, xi: float) -> tuple[float, float, float]:
    if eta == 0 and xi == 0:
        raise ZeroFrequency("(eta, xi) must be nonzero")
    r = math.hypot(eta, xi)
    mid = -params.u0 * xi
    return mid - params.c0 * r, mid, mid + params.c0 * r


def closed_form_xi(params: EulerParams, tau: float, eta: float, rtol: float = 1e-14) -> dict:
    """Region tag ('H', 'G', 'EH') and the three normal roots (xi1, xi2, xi3)."""
    if tau == 0 and eta == 0:
        raise ZeroFrequency("(tau, eta) must be nonzero")
    u0, c0 = params.u0, params.c0
    s2 = c0**2 - u0**2
    disc = tau**2 - s2 * eta**2
    xi3 = -tau / u0
    sgn = 1.0 if tau >= 0 else -1.0
    if abs(disc) <= rtol * (tau**2 + s2 * eta**2):
        x = tau * u0 / s2
        return {"region": "G", "xi": (complex(x), complex(x), complex(xi3))}
    if disc > 0:
        root = c0 * math.sqrt(disc)
        xi1 = (tau * u0 + sgn * root) / s2
        xi2 = (tau * u0 - sgn * root) / s2
        return {"region": "H", "xi": (complex(xi1), complex(xi2), complex(xi3))}
    root = c0 * math.sqrt(-disc)
    xi1 = complex(tau * u0, sgn * root) / s2
    xi2 = complex(tau * u0, -sgn * root) / s2
    return {"region": "EH", "xi": (xi1, xi2, complex(xi3))}


def glancing_thresholds(params: EulerParams) -> tuple[float, float]:
    """(K_minus, K_plus): values of p/q where zeta_{p,q} hits a glancing line."""
    s = params.s / params.c0
    d = params.delta
    return (s - d) / (1.0 - s), (-s - d) / (1.0 + s)


def region_classify(params: EulerParams, p: int, q: int) -> tuple[str, int]:
    """Region of zeta_{p,q} and the sign of its tau component.

    The mixed band is the open interval between the two thresholds; it
    contains p/q = -delta, where tau vanishes.
    """
    if p == 0 and q == 0:
        raise ZeroFrequency("(p, q) must be nonzero")
    tau_sign = int(np.sign(p + params.delta * q))
    if q == 0:
        return "H", int(np.sign(p))
    k_minus, k_plus = glancing_thresholds(params)
    x = p / q
    for k in (k_minus, k_plus):
        if abs(x - k) <= EXACT_GLANCING_RTOL * max(1.0, abs(k)):
            raise ExactGlancing(f"zeta_({p},{q}) lies on a glancing line (p/q = {x!r})")
    if k_minus < x < k_plus:
        return "EH", tau_sign
    return "H", tau_sign


def euler_gamma(params: EulerParams, p: int, q: int, r: int, s: int) -> float:
    """Closed-form interaction coefficient for the linear (entropy/vorticity) family."""
    if (p, q) == (0, 0) or (r, s) == (0, 0) or (p + r, q + s) == (0, 0):
        raise ZeroFrequency("all three lattice points must be nonzero")
    u0 = params.u0
    tpq, epq = lattice_zeta(params, p, q)
    trs, ers = lattice_zeta(params, r, s)
    tsum, esum = lattice_zeta(params, p + r, q + s)

    def norm(tau: float, eta: float) -> float:
        return math.sqrt(eta**2 + tau**2 / u0**2)

    num = (tpq * ers - trs * epq) * (tsum * trs + u0**2 * esum * ers)
    den = u0**4 * norm(tpq, epq) * norm(trs, ers) * norm(tsum, esum)
    return -num / den


def entropy_polarization(eta: float, xi: float) -> np.ndarray:
    """The odd basis vector (0, xi, -eta)/|(eta, xi)| spanning ker L on the middle branch."""
    r = math.hypot(eta, xi)
    return np.array([0.0, xi / r, -eta / r])


def pitilde_middle(params: EulerParams, eta: float, xi: float) -> np.ndarray:
    """Closed-form pi_tilde_2(eta, xi) for the middle branch."""
    u0, c0, v0 = params.u0, params.c0, params.v0
    w = u0**2 - c0**2
    M = np.array([
        [-u0 * c0**2 * eta**2, -u0**2 * v0 * eta * xi, u0**2 * v0 * eta**2],
        [eta * xi * c0**2 * w / v0, xi**2 * u0 * w, -eta * xi * u0 * w],
        [-eta**2 * c0**2 * u0**2 / v0, -eta * xi * u0**3, u0**3 * eta**2],
    ])
    return M / (u0 * w * (eta**2 + xi**2))


def glancing_distance_zeta(params: EulerParams, tau: float, eta: float) -> float:
    """Euclidean distance from (tau, eta) to the lines tau = +-s eta."""
    s = params.s
    den = math.sqrt(1.0 + s * s)
    return min(abs(tau - s * eta), abs(tau + s * eta)) / den


def euler_glancing_distance(params: EulerParams, p: int, q: int) -> float:
    tau, eta = lattice_zeta(params, p, q)
    return glancing_distance_zeta(params, tau, eta)


def dissipative_margin(params: EulerParams) -> float:
    """Closed form of E^T S(V0) A_2(V0) E for E = (v0, 0, u0)."""
    return params.u0 * params.v0**2 * (params.u0**2 - params.c0**2)
