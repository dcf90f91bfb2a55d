import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thirdmedium.kinematics import kinematic_state
from thirdmedium.material import (MediumParams, SolidParams, medium_conductivity, medium_energy, medium_stress,
                                  reference_heat_flux, regularization_density, solid_energy, solid_stress)
from thirdmedium.oracles import FdScheme, fd_gradient

SOLID = SolidParams(K=20.0, mu=10.0, k_theta=100.0, alpha_t=1e-3, theta0=20.0)
MEDIUM = MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0, alpha_tm=1e-3, theta0=20.0)


def _sqrtm(C):
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return (V * np.sqrt(w)) @ V.T


def _random_F(rng, jmin=0.2, jmax=5.0):
    while True:
        F = np.eye(3) + 0.4 * rng.standard_normal((3, 3))
        J = np.linalg.det(F)
        if jmin <= J <= jmax:
            return F


# --- solid -----------------------------------------------------------------


def test_solid_energy_reference():
    assert solid_energy(kinematic_state(np.eye(3)), 20.0, SOLID) == 0.0


def test_solid_energy_dilation_is_volumetric_only():
    J = 0.7
    kin = kinematic_state(J ** (1 / 3) * np.eye(3))
    assert solid_energy(kin, 20.0, SOLID) == pytest.approx(0.5 * 20.0 * math.log(J) ** 2, rel=1e-12)


def test_solid_energy_uniaxial_scalar():
    expected = 0.5 * 20.0 * math.log(1.2) ** 2 + 0.5 * 10.0 * (1.2 ** (-2 / 3) * (1.44 + 2.0) - 3.0)
    assert solid_energy(kinematic_state(np.diag([1.2, 1.0, 1.0])), 20.0, SOLID) == pytest.approx(expected, rel=1e-13)


def test_solid_stress_reference_and_prestress():
    kin = kinematic_state(np.eye(3))
    np.testing.assert_array_equal(solid_stress(kin, 20.0, SOLID).S, np.zeros((3, 3)))
    S = solid_stress(kin, 70.0, SOLID).S
    np.testing.assert_allclose(S, -3 * 1e-3 * 50.0 * 20.0 * np.eye(3), atol=1e-14)


def test_solid_stress_P_is_FS():
    F = np.diag([1.1, 0.9, 1.05]) + 0.05
    st_ = solid_stress(kinematic_state(F), 25.0, SOLID)
    np.testing.assert_allclose(st_.P, F @ st_.S, rtol=1e-14)
    np.testing.assert_allclose(st_.S, st_.S.T, atol=1e-14)


def _stress_fd_error(energy, stress, params, F, theta):
    kin = kinematic_state(F)

    def psi(C):
        return energy(kinematic_state(_sqrtm(C)), theta, params)

    g = fd_gradient(psi, kin.C, FdScheme(1e-6))
    g = 0.5 * (g + g.T)
    S = stress(kin, theta, params).S
    return np.max(np.abs(2 * g - S)) / np.max(np.abs(S))


@pytest.mark.parametrize("energy, stress, params", [(solid_energy, solid_stress, SOLID),
                                                    (medium_energy, medium_stress, MEDIUM)],
                         ids=["solid", "medium"])
def test_stress_matches_fd_energy_gradient(energy, stress, params):
    rng = np.random.default_rng(7)
    worst = max(_stress_fd_error(energy, stress, params, _random_F(rng), 20.0 + 10 * rng.standard_normal())
                for _ in range(100))
    assert worst < 1e-6


# --- heat flux ---------------------------------------------------------------


def test_flux_reference_frame():
    g = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(reference_heat_flux(kinematic_state(np.eye(3)), g, 4.0), -4.0 * g)


def test_flux_zero_gradient():
    kin = kinematic_state(np.diag([1.3, 0.8, 1.0]))
    np.testing.assert_array_equal(reference_heat_flux(kin, np.zeros(3), 4.0), np.zeros(3))


def test_flux_dilation():
    Q = reference_heat_flux(kinematic_state(2.0 * np.eye(3)), [1.0, 0.0, 0.0], 1.0)
    np.testing.assert_allclose(Q, [-2.0, 0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3)),
       arrays(np.float64, 3, elements=st.floats(-10, 10)), st.floats(0, 50))
def test_flux_pull_back_and_sign(G, grad, k):
    F = np.eye(3) + G
    kin = kinematic_state(F)
    Q = reference_heat_flux(kin, grad, k)
    spatial = F @ Q / kin.J
    np.testing.assert_allclose(spatial, -k * np.linalg.inv(F).T @ grad, atol=1e-10 * (1 + k * np.abs(grad).max()))
    assert Q @ grad <= 1e-12


# --- conductivity -------------------------------------------------------------


def test_conductivity_examples():
    m = MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0)
    assert medium_conductivity(1.0, m) == 0.0
    assert medium_conductivity(math.exp(-1.0), m) == pytest.approx(1.0, rel=1e-14)
    assert medium_conductivity(1e-6, m) == 100.0


def test_floored_conductivity():
    m = MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0, conductivity_law="floored")
    assert medium_conductivity(1.0, m) == 1.0
    assert medium_conductivity(0.01, m) == pytest.approx(math.log(0.01) ** 2)
    assert medium_conductivity(1e-6, m) == 100.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-8, 1.0), st.floats(1e-8, 1.0))
def test_conductivity_bounded_and_monotone(a, b):
    m = MediumParams(gamma=1e-4, k_tm=0.5, k_cap=20.0)
    lo, hi = sorted((a, b))
    k_lo, k_hi = medium_conductivity(lo, m), medium_conductivity(hi, m)
    assert 0.0 <= k_hi <= k_lo <= m.k_cap


def test_conductivity_continuous_at_cap():
    m = MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0)
    jc = math.exp(-10.0)
    assert medium_conductivity(jc * (1 + 1e-9), m) == pytest.approx(100.0, rel=1e-7)


# --- medium energy and barrier -------------------------------------------------


def test_medium_energy_examples():
    assert medium_energy(kinematic_state(np.eye(3)), 20.0, MEDIUM) == 0.0
    kin = kinematic_state(0.01 ** (1 / 3) * np.eye(3))
    e = medium_energy(kin, 20.0, MEDIUM)
    assert e == pytest.approx(1.0603e-3, rel=1e-4)
    doubled = MediumParams(gamma=2e-4, k_tm=1.0, k_cap=100.0, alpha_tm=1e-3, theta0=20.0)
    assert medium_energy(kin, 20.0, doubled) == pytest.approx(2 * e, rel=1e-14)


def test_medium_reference_stress():
    np.testing.assert_array_equal(medium_stress(kinematic_state(np.eye(3)), 20.0, MEDIUM).S, np.zeros((3, 3)))


def test_barrier_pressure_grows():
    pressures = []
    for J in (0.5, 0.1, 0.01):
        F = J ** (1 / 3) * np.eye(3)
        kin = kinematic_state(F)
        sigma = F @ medium_stress(kin, 20.0, MEDIUM).S @ F.T / J
        pressures.append(-np.trace(sigma) / 3)
    assert pressures[0] > 0
    assert np.all(np.diff(pressures) > 0)


def test_barrier_energy_diverges():
    Js = np.logspace(-1, -11, 11)
    e = [medium_energy(kinematic_state(np.diag([1.0, 1.0, J])), 20.0, MEDIUM) for J in Js]
    assert np.all(np.diff(e) > 0)
    assert e[-1] > 100 * e[0]


# --- regularization -----------------------------------------------------------


def test_regularization_examples():
    assert regularization_density([0.3], [0.6], [[0.0, 0.0]], 1.0, 1e-2, 2.0) == 0.0
    assert regularization_density([0.5], [0.0], [[0.0, 0.0]], 1.0, 1e-2, 2.0) == pytest.approx(0.125)
    assert regularization_density([0.0], [0.0], [[2.0, 0.0]], 1.0, 1e-2, 2.0) == pytest.approx(0.02)


def test_regularization_rejects_bad_scale():
    with pytest.raises(ValueError):
        regularization_density([0.0], [0.0], [[0.0, 0.0]], 1.0, 1e-2, 0.0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        SolidParams(K=-1.0, mu=1.0, k_theta=1.0)
    with pytest.raises(ValueError):
        MediumParams(gamma=1e-4, k_tm=2.0, k_cap=1.0)
