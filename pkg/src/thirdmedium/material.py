"""Constitutive laws for the solids and the third medium.

Both regions use the same compressible neo-Hookean energy with a
volumetric thermal-expansion term; the medium scales every stiffness by a
small factor ``gamma``. The thermal factor ``3 alpha (theta - theta0)`` is
treated as a parameter when the energy is differentiated with respect to
the deformation, so the stress tangent holds temperature fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicState

CONDUCTIVITY_LAWS = ("ramp", "floored")


@dataclass(frozen=True)
class SolidParams:
    K: float
    mu: float
    k_theta: float
    alpha_t: float = 0.0
    theta0: float = 0.0

    def __post_init__(self):
        if not (self.K > 0 and self.mu > 0 and self.k_theta > 0):
            raise ValueError("solid parameters require K > 0, mu > 0, k_theta > 0")


@dataclass(frozen=True)
class MediumParams:
    gamma: float
    k_tm: float
    k_cap: float
    alpha_tm: float = 0.0
    beta1: float = 1.0
    beta2: float = 1e-2
    theta0: float = 0.0
    conductivity_law: str = "ramp"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("medium stiffness gamma must be positive")
        if not (0 < self.k_tm <= self.k_cap):
            raise ValueError("medium conductivity requires 0 < k_tm <= k_cap")
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("regularization weights must be positive")
        if self.conductivity_law not in CONDUCTIVITY_LAWS:
            raise ValueError(f"conductivity_law must be one of {CONDUCTIVITY_LAWS}")


@dataclass(frozen=True)
class StressState:
    S: np.ndarray
    P: np.ndarray


def _moduli(p) -> tuple[float, float, float]:
    if isinstance(p, SolidParams):
        return p.K, p.mu, p.alpha_t
    return p.gamma, p.gamma, p.alpha_tm


def _energy(kin: KinematicState, theta, kvol, mu, alpha, theta0):
    lnJ = np.log(kin.J)
    dth = np.asarray(theta, dtype=float) - theta0
    return 0.5 * kvol * lnJ**2 + 0.5 * mu * (kin.trC_iso - 3.0) - 3.0 * alpha * dth * kvol * lnJ


def _second_pk(kin: KinematicState, theta, kvol, mu, alpha, theta0):
    lnJ = np.log(kin.J)
    dth = np.asarray(theta, dtype=float) - theta0
    vol = kvol * lnJ - 3.0 * alpha * dth * kvol
    trC = np.trace(kin.C, axis1=-2, axis2=-1)
    iso = mu * kin.J ** (-2.0 / 3.0)
    S = vol[..., None, None] * kin.Cinv + iso[..., None, None] * (np.eye(3) - (trC / 3.0)[..., None, None] * kin.Cinv)
    return StressState(S=S, P=kin.F @ S)


def solid_energy(kin: KinematicState, theta, p: SolidParams):
    """Mechanical plus thermal-expansion energy density of a solid."""
    return _energy(kin, theta, p.K, p.mu, p.alpha_t, p.theta0)


def solid_stress(kin: KinematicState, theta, p: SolidParams) -> StressState:
    return _second_pk(kin, theta, p.K, p.mu, p.alpha_t, p.theta0)


def medium_energy(kin: KinematicState, theta, p: MediumParams):
    """Barrier energy of the third medium, (gamma/2)[(ln J)^2 + trC_iso - 3] plus expansion."""
    return _energy(kin, theta, p.gamma, p.gamma, p.alpha_tm, p.theta0)


def medium_stress(kin: KinematicState, theta, p: MediumParams) -> StressState:
    return _second_pk(kin, theta, p.gamma, p.gamma, p.alpha_tm, p.theta0)


def stress_and_tangent(kin: KinematicState, theta, p):
    """First Piola stress P, dP/dF and dP/dtheta for either region type.

    Shapes: P (..., 3, 3), A (..., 3, 3, 3, 3) indexed [a, J, b, L] for
    dP_aJ/dF_bL, and dP/dtheta (..., 3, 3).
    """
    kvol, mu, alpha = _moduli(p)
    F = kin.F
    H = np.swapaxes(kin.Finv, -1, -2)
    J = kin.J
    lnJ = np.log(J)
    dth = np.asarray(theta, dtype=float) - p.theta0
    pv = kvol * lnJ - 3.0 * alpha * kvol * dth
    I1 = np.einsum("...ij,...ij->...", F, F)
    c = mu * J ** (-2.0 / 3.0)

    P = pv[..., None, None] * H + c[..., None, None] * (F - (I1 / 3.0)[..., None, None] * H)

    HH = np.einsum("...aJ,...bL->...aJbL", H, H)
    HHt = np.einsum("...aL,...bJ->...aJbL", H, H)
    FH = np.einsum("...aJ,...bL->...aJbL", F, H)
    HF = np.einsum("...aJ,...bL->...aJbL", H, F)
    eye4 = np.einsum("ab,JL->aJbL", np.eye(3), np.eye(3))
    A = kvol * HH - pv[..., None, None, None, None] * HHt
    A = A + c[..., None, None, None, None] * (
        eye4
        - (2.0 / 3.0) * (FH + HF)
        + (2.0 / 9.0) * I1[..., None, None, None, None] * HH
        + (1.0 / 3.0) * I1[..., None, None, None, None] * HHt
    )
    dP_dtheta = -3.0 * alpha * kvol * H * np.ones_like(J)[..., None, None]
    return P, A, dP_dtheta


def reference_heat_flux(kin: KinematicState, grad_theta, k_eff):
    """Reference heat flux Q = -J k C^-1 grad_X theta (3-vectors, 2D padded with 0)."""
    g = _pad3(grad_theta)
    k_eff = np.asarray(k_eff, dtype=float)
    if np.any(k_eff < 0):
        raise ValueError("conductivity must be non-negative")
    return -(kin.J * k_eff)[..., None] * np.einsum("...JL,...L->...J", kin.Cinv, g)


def _pad3(v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 3:
        return v
    out = np.zeros(v.shape[:-1] + (3,))
    out[..., : v.shape[-1]] = v
    return out


def medium_conductivity(J, p: MediumParams):
    """Effective medium conductivity min(k_tm (ln J)^2, k_cap).

    With ``conductivity_law == "floored"`` the ramp starts from k_tm:
    min(k_tm max(1, (ln J)^2), k_cap).
    """
    return medium_conductivity_with_derivative(J, p)[0]


def medium_conductivity_with_derivative(J, p: MediumParams):
    J = np.asarray(J, dtype=float)
    if np.any(J <= 0):
        raise ValueError("J must be positive")
    lnJ = np.log(J)
    ramp = p.k_tm * lnJ**2
    dramp = 2.0 * p.k_tm * lnJ / J
    if p.conductivity_law == "floored":
        low = lnJ**2 < 1.0
        ramp = np.where(low, p.k_tm, ramp)
        dramp = np.where(low, 0.0, dramp)
    capped = ramp >= p.k_cap
    k = np.where(capped, p.k_cap, ramp)
    dk = np.where(capped, 0.0, dramp)
    return k, dk


def regularization_density(f, pvals, grad_p, beta1, beta2, d):
    """Sum over components of (beta1/2)(f_i - p_i/d)^2 + (beta2/2)|grad p_i|^2.

    ``f`` and ``pvals`` have shape (..., m); ``grad_p`` (..., m, dim).
    """
    if not d > 0:
        raise ValueError("domain scale d must be positive")
    f = np.asarray(f, dtype=float)
    pvals = np.asarray(pvals, dtype=float)
    grad_p = np.asarray(grad_p, dtype=float)
    pen = 0.5 * beta1 * (f - pvals / d) ** 2
    grad = 0.5 * beta2 * np.sum(grad_p**2, axis=-1)
    return np.sum(pen + grad, axis=-1)
