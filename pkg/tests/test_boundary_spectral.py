from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wkbprofile.boundary_spectral import (
    boundary_solve,
    boundary_symbol,
    decompose_stable,
    evanescent_propagator,
    hemisphere_samples,
    lopatinskii_scan,
    lopatinskii_value,
    stable_basis,
    strictly_dissipative_check,
)
from wkbprofile.char_variety import eigen_structure
from wkbprofile.errors import DimensionMismatch, GlancingFrequency, NotASymmetrizer
from wkbprofile.euler2d import build_euler, closed_form_xi, lattice_zeta
from wkbprofile.system_model import HyperbolicSystem, linearize

HYPERBOLIC = np.array([1.3, 0.4])


def mixed_zeta(params):
    return np.array(lattice_zeta(params, 7, -6))


def test_symbol_roots_match_closed_form(params, lin):
    sym = boundary_symbol(lin, 1.3, [0.4])
    xi_ref = closed_form_xi(params, 1.3, 0.4)["xi"]
    eig = np.linalg.eigvals(sym.A)
    assert np.allclose(np.real(eig), 0.0, atol=1e-12)
    for xi in xi_ref:
        assert np.min(np.abs(eig - 1j * xi)) <= 1e-12
    for tau in (-2.0, 0.3, 5.0):
        eig = np.linalg.eigvals(boundary_symbol(lin, tau, [1.7]).A)
        assert np.min(np.abs(eig - 1j * (-tau / params.u0))) <= 1e-12


def test_symbol_homogeneity_and_errors(lin):
    a = boundary_symbol(lin, 0.7 - 0.2j, [0.3]).A
    b = boundary_symbol(lin, 7 * (0.7 - 0.2j), [2.1]).A
    assert np.allclose(b, 7 * a, atol=1e-13)
    with pytest.raises(DimensionMismatch):
        boundary_symbol(lin, 1.0, [0.1, 0.2])
    with pytest.raises(DimensionMismatch):
        boundary_symbol(lin, 0.0, [0.0])


def test_hyperbolic_region_classes(params, lin):
    dec = decompose_stable(lin, HYPERBOLIC)
    tags = sorted(r.cls for r in dec.roots)
    assert tags == ["incoming", "incoming", "outgoing"]
    assert dec.E_minus_basis.shape == (3, lin.p) and lin.p == 2
    xi_ref = closed_form_xi(params, *HYPERBOLIC)["xi"]
    by_xi = {round(r.xi.real, 9): r.cls for r in dec.roots}
    assert by_xi[round(xi_ref[0].real, 9)] == "outgoing"
    assert by_xi[round(xi_ref[2].real, 9)] == "incoming"


def test_mixed_region_classes(params, lin):
    z = mixed_zeta(params)
    assert closed_form_xi(params, *z)["region"] == "EH"
    dec = decompose_stable(lin, z)
    assert sorted(r.cls for r in dec.roots) == ["elliptic-stable", "elliptic-unstable", "incoming"]
    inc = dec.roots[dec.indices("incoming")[0]]
    assert abs(inc.xi.real + z[0] / params.u0) <= 1e-12


@pytest.mark.parametrize("zeta_pq", [(1, 1), (3, 0), (7, -6), (-8, 7), (2, -5)])
def test_projector_completeness(params, lin, zeta_pq):
    z = np.array(lattice_zeta(params, *zeta_pq))
    dec = decompose_stable(lin, z)
    total = dec.projectors["elliptic_CN"] + dec.projectors["elliptic_plus_CN"]
    for j, r in enumerate(dec.roots):
        if r.cls in ("incoming", "outgoing"):
            es = eigen_structure(lin, z[1:], r.xi.real)
            P = dec.spectral_projector(j)
            # same range as the characteristic projector, split along the other roots
            assert np.linalg.norm(es.pis[r.branch] @ P - P) <= 1e-9
            total = total + P
    assert np.linalg.norm(total - np.eye(3)) <= 1e-9
    Pe = dec.projectors["elliptic_CN"]
    assert np.linalg.norm(Pe @ Pe - Pe) <= 1e-9
    # range of the elliptic projector lies in E_-
    Q, _ = np.linalg.qr(dec.E_minus_basis)
    assert np.linalg.norm(Pe - Q @ (Q.conj().T @ Pe)) <= 1e-9


def test_incoming_projectors_partition_stable_space(params, lin):
    for pq in ((1, 1), (7, -6)):
        dec = decompose_stable(lin, np.array(lattice_zeta(params, *pq)))
        parts = list(dec.projectors["incoming"].values()) + [dec.projectors["elliptic_minus"]]
        for w in dec.E_minus_basis.T:
            assert np.linalg.norm(sum(P @ w for P in parts) - w) <= 1e-9
        for a, Pa in enumerate(parts):
            for b, Pb in enumerate(parts):
                ref = Pa if a == b else np.zeros_like(Pa)
                assert np.linalg.norm((Pa @ Pb - ref) @ dec.E_minus_basis) <= 1e-9


def test_hersh_count_for_positive_gamma(lin):
    for sigma, eta in hemisphere_samples(2, 400, gammas=(0.01, 0.1, 1.0)):
        A = boundary_symbol(lin, sigma, eta).A
        re = np.real(np.linalg.eigvals(A))
        assert np.min(np.abs(re)) > 0
        assert int(np.sum(re < 0)) == lin.p
        _, count = stable_basis(lin, sigma, eta)
        assert count == lin.p


@settings(max_examples=40, deadline=None)
@given(scale=st.floats(0.1, 20.0), angle=st.floats(0.0, 2 * np.pi))
def test_decomposition_homogeneity(lin, scale, angle):
    z = np.array([np.cos(angle), np.sin(angle)])
    try:
        a = decompose_stable(lin, z)
        b = decompose_stable(lin, scale * z)
    except GlancingFrequency:
        return
    assert [r.cls for r in a.roots] == [r.cls for r in b.roots]
    for ra, rb in zip(a.roots, b.roots):
        assert abs(rb.xi - scale * ra.xi) <= 1e-9 * scale * max(1.0, abs(ra.xi))


def test_glancing_frequency_raises(params, lin):
    with pytest.raises(GlancingFrequency):
        decompose_stable(lin, np.array([params.s, 1.0]))


def test_kl_scan_passes_for_euler(lin):
    small = lopatinskii_scan(lin, lin.system.B, 2000)
    large = lopatinskii_scan(lin, lin.system.B, 4000)
    assert small["pass"] and large["pass"] and small["hersh_ok"]
    assert abs(small["min_det"] - large["min_det"]) <= 0.1 * large["min_det"]


def test_kl_scan_fails_for_constructed_boundary(lin):
    sigma, eta = hemisphere_samples(2, 40, gammas=(0.0,))[3]
    z = np.concatenate([[sigma.real], eta])
    dec = decompose_stable(lin, z)
    Q, _ = np.linalg.qr(dec.E_minus_basis)
    assert np.allclose(Q.imag, 0.0)
    # first row annihilates E_-(z); the second is arbitrary, so B restricted to E_- is singular
    w = np.linalg.svd(Q.real.T)[2][-1]
    B = np.vstack([w, [1.0, 2.0, 3.0]])
    assert lopatinskii_value(lin, B, sigma, eta) <= 1e-12
    report = lopatinskii_scan(lin, B, 40, gammas=(0.0,))
    assert not report["pass"] and report["min_det"] <= 1e-12


def test_kl_scan_rejects_wrong_shape(lin):
    assert not lopatinskii_scan(lin, np.ones((1, 3)), 20)["pass"]


def test_strictly_dissipative_euler(params, lin):
    S = build_euler(params).symmetrizer
    rep = strictly_dissipative_check(lin, lin.system.B, S)
    u0, v0, c0 = params.u0, params.v0, params.c0
    E = np.array([v0, 0.0, u0])
    assert rep["pass"]
    assert abs(rep["margin"] - u0 * v0**2 * (u0**2 - c0**2) / (E @ E)) <= 1e-12
    bad = strictly_dissipative_check(lin, lin.system.B, S, kernel_vector=[0.0, 1.0, 0.0])
    assert not bad["pass"]
    assert abs(bad["margin"] - u0 * v0**2) <= 1e-12


def _constant(A1, A2, B):
    A = [np.asarray(A1, float), np.asarray(A2, float)]
    return linearize(HyperbolicSystem(2, len(A1), 2, lambda i, u: A[i - 1], B, [[1.0, 0.0], [0.0, 1.0]]))


def test_strictly_dissipative_identity_symmetrizer():
    lin = _constant(np.diag([1.0, 2.0]), -np.diag([1.0, 3.0]), np.zeros((1, 2)))
    rep = strictly_dissipative_check(lin, np.zeros((1, 2)), lambda u: np.eye(2), n_dirs=32)
    assert rep["pass"] and rep["margin"] < 0
    with pytest.raises(NotASymmetrizer):
        strictly_dissipative_check(lin, np.zeros((1, 2)), lambda u: np.array([[1.0, 0.5], [0.0, 1.0]]))


@pytest.mark.parametrize("pq", [(1, 1), (7, -6)])
def test_boundary_solve_round_trip(params, lin, rng, pq):
    dec = decompose_stable(lin, np.array(lattice_zeta(params, *pq)))
    B = lin.system.B
    assert np.all(boundary_solve(dec, B, np.zeros(2)) == 0)
    for _ in range(20):
        w0 = dec.E_minus_basis @ (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        g = B @ w0
        w = boundary_solve(dec, B, g)
        assert np.linalg.norm(w - w0) <= 1e-10 * np.linalg.norm(w0)
        assert np.linalg.norm(B @ w - g) <= 1e-10 * np.linalg.norm(g)


def test_incoming_split_reassembles(params, lin, rng):
    dec = decompose_stable(lin, np.array(lattice_zeta(params, 1, 1)))
    B = lin.system.B
    g = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    w = boundary_solve(dec, B, g)
    pieces = [P @ w for P in dec.projectors["incoming"].values()]
    assert len(pieces) == 2
    assert np.linalg.norm(B @ sum(pieces) - g) <= 1e-9 * np.linalg.norm(g)


def test_evanescent_propagator(params, lin):
    z = mixed_zeta(params)
    dec = decompose_stable(lin, z)
    assert np.allclose(evanescent_propagator(dec, 0.0), dec.projectors["elliptic_CN"], atol=1e-14)
    mu = closed_form_xi(params, *z)["xi"][0].imag
    assert mu > 0 and abs(dec.decay_rate - mu) <= 1e-10
    for t in (0.1, 0.5, 1.0):
        n1 = np.linalg.norm(evanescent_propagator(dec, t), 2)
        n2 = np.linalg.norm(evanescent_propagator(dec, 2 * t), 2)
        assert abs(n2 / n1 - np.exp(-mu * t)) <= 1e-6
    assert np.allclose(evanescent_propagator(dec, -1e-300), np.eye(3) - dec.projectors["elliptic_CN"], atol=1e-12)
    # no elliptic-stable root in the hyperbolic region
    assert np.all(evanescent_propagator(decompose_stable(lin, HYPERBOLIC), 1.0) == 0)


def test_evanescent_bound_over_lattice_box(params, lin):
    c1 = 0.0
    ts = np.linspace(0.0, 20.0, 41)
    for p in range(-6, 7):
        for q in range(-6, 7):
            if (p, q) == (0, 0):
                continue
            try:
                dec = decompose_stable(lin, np.array(lattice_zeta(params, p, q)))
            except GlancingFrequency:
                continue
            if not dec.indices("elliptic-stable"):
                continue
            norms = [np.linalg.norm(evanescent_propagator(dec, t), 2) for t in ts]
            assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))
            c1 = max(c1, max(norms))
    print(f"measured evanescent bound c1 = {c1:.4f}")
    assert np.isfinite(c1) and c1 > 0
