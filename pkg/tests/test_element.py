import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thirdmedium.element import dofs_per_node, element_energy, element_system
from thirdmedium.kinematics import kinematic_state, rotation_proxies
from thirdmedium.material import MediumParams, SolidParams, solid_stress
from thirdmedium.oracles import FdScheme, fd_gradient, fd_jacobian
from thirdmedium.shapes import (NODES_PER_KIND, PARENT_CORNERS, batch_shape_eval, quadrature, shape_eval,
                                shape_values)
from thirdmedium.verify import random_element_state

SOLID = SolidParams(K=20.0, mu=10.0, k_theta=100.0, alpha_t=1e-3, theta0=20.0)
MEDIUM = MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0, alpha_tm=1e-3, theta0=20.0)
KINDS = ("T1", "Q1", "H1")


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30)


# --- shapes and quadrature ------------------------------------------------------


@pytest.mark.parametrize("kind, n, total", [("Q1", 4, 4.0), ("H1", 8, 8.0), ("T1", 1, 0.5)])
def test_quadrature_weights(kind, n, total):
    pts, w = quadrature(kind)
    assert len(w) == n and w.sum() == total


def test_unsupported_kind():
    with pytest.raises(ValueError):
        quadrature("Q2")


@pytest.mark.parametrize("kind", KINDS)
def test_kronecker_property(kind):
    np.testing.assert_allclose(shape_values(kind, PARENT_CORNERS[kind]), np.eye(NODES_PER_KIND[kind]), atol=1e-15)


def test_q1_centre_values():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(shape_eval("Q1", [0.0, 0.0], X).N, 0.25)


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_partition_of_unity(kind, seed):
    rng = np.random.default_rng(seed)
    dim = PARENT_CORNERS[kind].shape[1]
    xi = rng.uniform(0.0, 0.5, dim) if kind == "T1" else rng.uniform(-1, 1, dim)
    X = PARENT_CORNERS[kind] + 0.1 * rng.standard_normal(PARENT_CORNERS[kind].shape)
    sh = shape_eval(kind, xi, X)
    assert sh.N.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(sh.gradN_ref.sum(axis=0), 0.0, atol=1e-12)
    assert sh.detJ_ref > 0


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_reproduce_linear_field(kind):
    rng = np.random.default_rng(0)
    X = PARENT_CORNERS[kind] + 0.1 * rng.standard_normal(PARENT_CORNERS[kind].shape)
    a = rng.standard_normal(X.shape[1])
    sh = batch_shape_eval(kind, X[None])
    np.testing.assert_allclose(sh.gradN_ref[0].transpose(0, 2, 1) @ (X @ a), np.tile(a, (sh.N.shape[0], 1)),
                               atol=1e-12)


# --- element system ------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mat", [SOLID, MEDIUM], ids=["solid", "medium"])
def test_reference_state_is_equilibrium(kind, mat):
    X = PARENT_CORNERS[kind].astype(float)
    dim = X.shape[1]
    f = np.zeros((len(X), dofs_per_node(dim, mat)))
    f[:, dim] = mat.theta0
    np.testing.assert_array_equal(element_system(kind, X, f, mat).r, 0.0)


@pytest.mark.parametrize("kind", KINDS)
def test_translation_leaves_mechanical_rows_zero(kind):
    X = PARENT_CORNERS[kind].astype(float)
    dim = X.shape[1]
    f = np.zeros((len(X), dim + 1))
    f[:, :dim] = np.arange(1, dim + 1) * 0.37
    f[:, dim] = SOLID.theta0
    r = element_system(kind, X, f, SOLID).r.reshape(f.shape)
    np.testing.assert_allclose(r[:, :dim], 0.0, atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mat", [SOLID, MEDIUM, MediumParams(**{**MEDIUM.__dict__, "conductivity_law": "floored"})],
                         ids=["solid", "medium", "medium-floored"])
def test_tangent_matches_fd(kind, mat):
    rng = np.random.default_rng(11)
    for _ in range(5):
        X, f = random_element_state(rng, kind, mat, amplitude=0.08)
        es = element_system(kind, X, f, mat, d=2.0)
        K_fd = fd_jacobian(lambda x: element_system(kind, X, x.reshape(f.shape), mat, d=2.0).r, f.ravel(),
                           FdScheme(1e-7))
        assert _rel(es.k, K_fd) < 1e-6


def test_fd_tangent_mode_agrees():
    rng = np.random.default_rng(3)
    X, f = random_element_state(rng, "Q1", MEDIUM, amplitude=0.08)
    a = element_system("Q1", X, f, MEDIUM, d=2.0).k
    b = element_system("Q1", X, f, MEDIUM, d=2.0, tangent="fd").k
    assert _rel(b, a) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mat", [SOLID, MEDIUM], ids=["solid", "medium"])
def test_rows_are_energy_gradient(kind, mat):
    """Mechanical (and auxiliary) rows equal the gradient of the stored energy at fixed temperature."""
    rng = np.random.default_rng(5)
    X, f = random_element_state(rng, kind, mat, amplitude=0.08)
    dim = X.shape[1]
    r = element_system(kind, X, f, mat, d=2.0).r.reshape(f.shape)
    cols = [c for c in range(f.shape[1]) if c != dim]

    def energy(v):
        g = f.copy()
        g[:, cols] = v
        return element_energy(kind, X, g, mat, d=2.0)

    grad = fd_gradient(energy, f[:, cols], FdScheme(1e-6))
    assert _rel(r[:, cols], grad) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_patch_affine_displacement(kind):
    X = PARENT_CORNERS[kind] * 0.5 + 0.3
    dim = X.shape[1]
    G = np.full((dim, dim), 0.04) + np.diag(np.linspace(-0.1, 0.1, dim))
    f = np.zeros((len(X), dim + 1))
    f[:, :dim] = X @ G.T
    f[:, dim] = SOLID.theta0
    r = element_system(kind, X, f, SOLID).r.reshape(f.shape)
    P = solid_stress(kinematic_state(np.eye(dim) + G), SOLID.theta0, SOLID).P[:dim, :dim]
    sh = batch_shape_eval(kind, X[None])
    int_grad = np.einsum("q,qiJ->iJ", sh.detJ_ref[0], sh.gradN_ref[0])
    np.testing.assert_allclose(r[:, :dim], int_grad @ P.T, atol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mat", [SOLID, MEDIUM], ids=["solid", "medium"])
def test_uniform_temperature_thermal_rows_vanish(kind, mat):
    rng = np.random.default_rng(9)
    X, f = random_element_state(rng, kind, mat)
    f[:, X.shape[1]] = 55.0
    r = element_system(kind, X, f, mat).r.reshape(f.shape)
    np.testing.assert_array_equal(r[:, X.shape[1]], 0.0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mat", [SOLID, MEDIUM], ids=["solid", "medium"])
def test_conduction_block_symmetric_psd(kind, mat):
    rng = np.random.default_rng(13)
    X, f = random_element_state(rng, kind, mat)
    dim, ndpn = X.shape[1], f.shape[1]
    k = element_system(kind, X, f, mat).k
    idx = np.arange(len(X)) * ndpn + dim
    Ktt = k[np.ix_(idx, idx)]
    np.testing.assert_allclose(Ktt, Ktt.T, atol=1e-12 * np.abs(Ktt).max())
    assert np.linalg.eigvalsh(0.5 * (Ktt + Ktt.T)).min() > -1e-10 * np.abs(Ktt).max()


@pytest.mark.parametrize("kind", KINDS)
def test_regularization_rows_vanish_for_matching_aux(kind):
    X = PARENT_CORNERS[kind] * 0.5
    dim = X.shape[1]
    a = 0.2
    if dim == 2:
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    else:
        R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1.0]])
    f = np.zeros((len(X), dofs_per_node(dim, MEDIUM)))
    f[:, :dim] = X @ R.T - X
    f[:, dim] = MEDIUM.theta0
    f[:, dim + 1:] = 2.0 * rotation_proxies(R)
    r = element_system(kind, X, f, MEDIUM, d=2.0).r.reshape(f.shape)
    np.testing.assert_allclose(r[:, dim + 1:], 0.0, atol=1e-14)
    np.testing.assert_allclose(r[:, :dim], 0.0, atol=1e-14)
