from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wkbprofile.errors import ConfigParse, DimensionMismatch, NonFiniteCoefficient, SingularNormalMatrix
from wkbprofile.euler2d import EulerParams, build_euler
from wkbprofile.system_model import (
    HyperbolicSystem,
    apply_L1_tilde,
    fd_differential,
    linearize,
    rational_dependence,
    system_from_dict,
)

vectors = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).map(np.array)


def constant_system(A, B, zetas):
    A = np.asarray(A, float)
    return HyperbolicSystem(A.shape[0], A.shape[1], len(zetas), lambda i, u: A[i - 1], B, zetas)


def test_euler_normal_matrix_eigenvalues(params):
    lin = linearize(build_euler(params))
    u0, c0 = params.u0, params.c0
    assert np.allclose(np.sort(np.linalg.eigvals(lin.Ad).real), [u0 - c0, u0, u0 + c0], atol=1e-14)
    assert np.isclose(np.linalg.det(lin.Ad), u0 * (u0**2 - c0**2))


def test_constant_system_has_zero_differential(rng):
    sys = constant_system([np.eye(2), np.diag([1.0, -1.0])], [[1.0, 0.0]], [[1.0, 0.0], [np.sqrt(2), 1.0]])
    lin = linearize(sys)
    for _ in range(5):
        v = rng.standard_normal(2)
        for i in range(3):
            assert np.all(lin.dA_dot(i, v) == 0)


def test_analytic_and_finite_difference_differentials_agree(params, rng):
    sys = build_euler(params)
    for _ in range(20):
        v = rng.standard_normal(3)
        for i in (1, 2):
            assert np.max(np.abs(sys.diffs(i, v) - fd_differential(sys, i, v, 1e-6))) <= 1e-8


def test_linearized_tilde_matrices(lin):
    assert np.allclose(lin.Atilde[0], lin.AdInv, atol=1e-14)
    for i in range(lin.d):
        assert np.linalg.norm(lin.Ad @ lin.Atilde[i] - lin.A[i]) <= 1e-10


def test_dAtilde_product_rule(lin, rng):
    for _ in range(10):
        v = rng.standard_normal(3)
        dAd = lin.dA_dot(lin.d, v)
        for i in range(lin.d):
            expect = lin.AdInv @ lin.dA_dot(i, v) - lin.AdInv @ dAd @ lin.AdInv @ lin.A[i]
            assert np.linalg.norm(lin.dAtilde_dot(i, v) - expect) <= 1e-10


def test_singular_normal_matrix_raises():
    sys = constant_system([np.eye(2), np.diag([1.0, 0.0])], [[1.0, 0.0]], [[1.0, 0.0], [np.sqrt(2), 1.0]])
    with pytest.raises(SingularNormalMatrix):
        linearize(sys)


def test_nonfinite_coefficient_raises():
    sys = HyperbolicSystem(2, 1, 2, lambda i, u: np.array([[np.nan if i == 1 else 1.0]]), [[1.0]],
                           [[1.0, 0.0], [np.sqrt(2), 1.0]])
    with pytest.raises(NonFiniteCoefficient):
        linearize(sys)


def test_shape_validation():
    with pytest.raises(DimensionMismatch):
        HyperbolicSystem(2, 2, 2, lambda i, u: np.eye(2), [[1.0, 0.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        HyperbolicSystem(2, 2, 2, lambda i, u: np.eye(2), [[1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]])


def test_L1_tilde_zero_vector_and_homogeneity(lin, rng):
    zeta = rng.standard_normal(2)
    assert np.all(apply_L1_tilde(lin, np.zeros(3), zeta) == 0)
    v = rng.standard_normal(3)
    assert np.allclose(apply_L1_tilde(lin, v, 3 * zeta), 3 * apply_L1_tilde(lin, v, zeta), atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(vectors, vectors, st.floats(-2, 2), st.floats(-2, 2))
def test_L1_tilde_bilinear(v, w, a, b):
    lin = linearize(build_euler(EulerParams()))
    z1, z2 = np.array([a, 1.0]), np.array([1.0, b])
    lhs = apply_L1_tilde(lin, v + w, z1 + z2)
    rhs = sum(apply_L1_tilde(lin, x, z) for x in (v, w) for z in (z1, z2))
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(rhs))


def test_rational_dependence():
    assert rational_dependence(np.array([[1.0, 1.0], [2.0 ** (1 / 7), 1.0]])) == []
    assert rational_dependence(np.array([[1.0, 1.0], [2.0, 2.0]]))


def test_system_from_dict_builtin_and_custom():
    sys = system_from_dict({"builtin": "euler2d", "params": {"delta": 1.5}})
    assert sys.name == "euler2d" and np.isclose(sys.zetas[1, 0], 1.5)
    doc = {"d": 2, "N": 2, "m": 2, "A": [[[1, 0], [0, 2]], [[2, 1], [1, -1]]],
           "B": [[1, 0]], "zetas": [[1, 0], [1.4142135623730951, 1]]}
    custom = system_from_dict(doc)
    assert custom.N == 2 and np.allclose(custom.matrix(2), [[2, 1], [1, -1]])
    with pytest.raises(ConfigParse):
        system_from_dict({"builtin": "navier"})
    with pytest.raises(ConfigParse):
        system_from_dict({"d": 2, "N": 2})
