"""Deformation measures at quadrature points.

All functions broadcast over leading batch axes. Two-dimensional
deformation gradients are embedded as plane strain (F33 = 1) so the
three-dimensional formulas apply unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_J = 1e-12
EPS_DENOM = 1e-8

# index pairs (i, j) of the rotation proxies f = (F_ij - F_ji) / (F_ii + F_jj)
ROTATION_PAIRS = ((0, 1), (0, 2), (1, 2))


class ElementInversion(ArithmeticError):
    """det F fell below the admissible threshold (retryable during Newton)."""

    def __init__(self, message: str, element: int | None = None, qp: int | None = None):
        super().__init__(message)
        self.element = element
        self.qp = qp


class DegenerateDistortion(ArithmeticError):
    """A rotation-proxy denominator vanished."""


def deformation_gradient(grad_N, u_nodes) -> np.ndarray:
    """F = I + sum_I u_I (x) grad N_I.

    ``grad_N`` has shape (..., n, dim) and ``u_nodes`` (..., n, dim).
    """
    grad_N = np.asarray(grad_N, dtype=float)
    u_nodes = np.asarray(u_nodes, dtype=float)
    if grad_N.shape[-2:] != u_nodes.shape[-2:]:
        raise ValueError(f"dimension mismatch: gradients {grad_N.shape} vs displacements {u_nodes.shape}")
    dim = grad_N.shape[-1]
    return np.eye(dim) + np.einsum("...ia,...iJ->...aJ", u_nodes, grad_N)


def embed3(F) -> np.ndarray:
    """Plane-strain embedding of (..., 2, 2) tensors; 3x3 input passes through."""
    F = np.asarray(F, dtype=float)
    if F.shape[-1] == 3:
        return F
    out = np.zeros(F.shape[:-2] + (3, 3))
    out[..., :2, :2] = F
    out[..., 2, 2] = 1.0
    return out


def det3(F) -> np.ndarray:
    """Determinant of (..., 3, 3) arrays by cofactor expansion."""
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


@dataclass(frozen=True)
class KinematicState:
    F: np.ndarray
    J: np.ndarray
    C: np.ndarray
    Cinv: np.ndarray
    trC_iso: np.ndarray
    Finv: np.ndarray


def kinematic_state(F, eps_J: float = EPS_J) -> KinematicState:
    """J, C, C^-1 and J^(-2/3) tr C for (..., d, d) deformation gradients.

    Raises
    ------
    ElementInversion
        If det F <= ``eps_J`` anywhere; ``qp`` holds the first flat index.
    """
    F3 = embed3(F)
    J = det3(F3)
    bad = ~(J > eps_J)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ElementInversion(f"det F = {np.ravel(J)[idx]:.3e} <= {eps_J:g}", qp=idx)
    C = np.swapaxes(F3, -1, -2) @ F3
    Finv = np.linalg.inv(F3)
    Cinv = Finv @ np.swapaxes(Finv, -1, -2)
    trC_iso = J ** (-2.0 / 3.0) * np.trace(C, axis1=-2, axis2=-1)
    return KinematicState(F=F3, J=J, C=C, Cinv=Cinv, trC_iso=trC_iso, Finv=Finv)


def rotation_proxy(F3, pair, eps: float = EPS_DENOM):
    """Value, gradient and Hessian of (F_ij - F_ji)/(F_ii + F_jj) w.r.t. F.

    Returns arrays of shapes (...), (..., 3, 3) and (..., 3, 3, 3, 3).
    """
    i, j = pair
    num = F3[..., i, j] - F3[..., j, i]
    den = F3[..., i, i] + F3[..., j, j]
    if np.any(np.abs(den) < eps):
        raise DegenerateDistortion(f"rotation proxy denominator below {eps:g}")
    f = num / den
    batch = F3.shape[:-2]
    g = np.zeros(batch + (3, 3))
    g[..., i, j] = 1.0 / den
    g[..., j, i] = -1.0 / den
    g[..., i, i] = -num / den**2
    g[..., j, j] = -num / den**2
    h = np.zeros(batch + (3, 3, 3, 3))
    s2 = 1.0 / den**2
    s3 = 2.0 * num / den**3
    for d1 in ((i, i), (j, j)):
        h[..., i, j, d1[0], d1[1]] = -s2
        h[..., d1[0], d1[1], i, j] = -s2
        h[..., j, i, d1[0], d1[1]] = s2
        h[..., d1[0], d1[1], j, i] = s2
        for d2 in ((i, i), (j, j)):
            h[..., d1[0], d1[1], d2[0], d2[1]] = s3
    return f, g, h


def rotation_proxies(F) -> np.ndarray:
    """Rotation proxies (f1,) in 2D or (f1, f2, f3) in 3D, stacked on the last axis."""
    F = np.asarray(F, dtype=float)
    dim = F.shape[-1]
    F3 = embed3(F)
    pairs = ROTATION_PAIRS[:1] if dim == 2 else ROTATION_PAIRS
    return np.stack([rotation_proxy(F3, p)[0] for p in pairs], axis=-1)


def thermal_jacobian(theta, theta0, alpha_t):
    """Thermal volume ratio exp(3 alpha_t (theta - theta0))."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("absolute temperature must be positive")
    return np.exp(3.0 * alpha_t * (theta - theta0))
