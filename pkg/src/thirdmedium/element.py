"""Element residuals and consistent tangents.

Nodal unknowns are ordered per node as ``(u_1..u_dim, theta)`` for solids
and ``(u_1..u_dim, theta, p_1..p_m)`` for the third medium, with m = 1 in
2D and m = 3 in 3D. Everything is evaluated for a whole block of elements
of one kind and material at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import ROTATION_PAIRS, ElementInversion, DegenerateDistortion, kinematic_state, rotation_proxy
from .material import (
    MediumParams,
    SolidParams,
    medium_conductivity_with_derivative,
    medium_energy,
    regularization_density,
    solid_energy,
    stress_and_tangent,
)
from .shapes import NODES_PER_KIND, ShapeEval, batch_shape_eval, quadrature  # noqa: F401

TANGENT_MODES = ("analytic", "fd")


@dataclass(frozen=True)
class ElementSystem:
    r: np.ndarray
    k: np.ndarray


def n_aux(dim: int) -> int:
    """Number of auxiliary regularization fields per medium node."""
    return 1 if dim == 2 else 3


def dofs_per_node(dim: int, material) -> int:
    return dim + 1 + (n_aux(dim) if isinstance(material, MediumParams) else 0)


def _einsum(expr, *ops):
    return np.einsum(expr, *ops, optimize=True)


def _stiffness(wdN, A, dN):
    """K[e,i,a,k,b] = sum_q wdN[e,q,i,J] A[e,q,a,J,b,L] dN[e,q,k,L] via batched matmul."""
    E, Q, n, dim = dN.shape
    na, nb = A.shape[2], A.shape[4]
    # contract L: (E,Q,aJb,L) @ (E,Q,L,k) -> (E,Q,a,J,b,k)
    T = A.reshape(E, Q, na * dim * nb, dim) @ np.swapaxes(dN, -1, -2)
    T = T.reshape(E, Q, na, dim, nb * n).transpose(0, 1, 3, 2, 4).reshape(E, Q * dim, na * nb * n)
    left = np.swapaxes(wdN.transpose(0, 1, 3, 2).reshape(E, Q * dim, n), -1, -2)
    K = left @ T  # (E, n, a*b*k)
    return K.reshape(E, n, na, nb, n).transpose(0, 1, 2, 4, 3)


def _coupling(wdN, M, dN):
    """K[e,i,k] = sum_q wdN[e,q,i,J] M[e,q,J,L] dN[e,q,k,L]."""
    E, Q, n, dim = dN.shape
    T = (M @ np.swapaxes(dN, -1, -2)).reshape(E, Q * dim, n)
    left = np.swapaxes(wdN.transpose(0, 1, 3, 2).reshape(E, Q * dim, n), -1, -2)
    return left @ T


def _kinematics(F, n_qp):
    try:
        return kinematic_state(F)
    except ElementInversion as exc:
        raise ElementInversion(str(exc), element=exc.qp // n_qp, qp=exc.qp % n_qp) from None


def block_system(kind, material, X, fields, shape=None, load=None, d=1.0, tangent="analytic", want_k=True):
    """Residuals (E, n*ndpn) and tangents (E, n*ndpn, n*ndpn) of a block.

    Parameters
    ----------
    kind : element kind, "T1", "Q1" or "H1".
    material : SolidParams or MediumParams; decides the DOF layout.
    X : (E, n, dim) reference coordinates.
    fields : (E, n, ndpn) nodal unknowns.
    shape : precomputed :class:`ShapeEval` for ``X`` (optional).
    load : (body force vector, heat source) per unit reference volume.
    d : domain scale of the regularization.
    tangent : "analytic" or "fd".

    Raises
    ------
    ElementInversion
        ``element`` is the index within the block.
    """
    if tangent not in TANGENT_MODES:
        raise ValueError(f"tangent must be one of {TANGENT_MODES}")
    X = np.asarray(X, dtype=float)
    fields = np.asarray(fields, dtype=float)
    dim = X.shape[2]
    ndpn = dofs_per_node(dim, material)
    if fields.shape[-1] != ndpn or fields.shape[:2] != X.shape[:2]:
        raise ValueError(f"fields must have shape {X.shape[:2] + (ndpn,)}, got {fields.shape}")
    if isinstance(material, MediumParams) and not d > 0:
        raise ValueError("domain scale d must be positive")
    if shape is None:
        shape = batch_shape_eval(kind, X)
    if tangent == "fd" and want_k:
        r = _analytic(material, fields, shape, load, d, want_k=False)[0]
        return r, _fd_tangent(material, fields, shape, load, d)
    return _analytic(material, fields, shape, load, d, want_k)


def _analytic(material, fields, sh: ShapeEval, load, d, want_k):
    E, n, ndpn = fields.shape
    dN, w, N = sh.gradN_ref, sh.detJ_ref, sh.N
    dim = dN.shape[-1]
    Q = N.shape[0]
    medium = isinstance(material, MediumParams)
    body, source = _load(load, dim)

    U = fields[..., :dim]
    T = fields[..., dim]
    F = np.eye(dim) + np.einsum("eia,eqiJ->eqaJ", U, dN)
    kin = _kinematics(F, Q)
    # offsets from the first node keep uniform fields exact (no roundoff prestress or flux)
    dT = T - T[:, :1]
    theta = T[:, :1] + (N @ dT.T).T  # (E, Q)
    g = np.einsum("ei,eqiJ->eqJ", dT, dN)
    g3 = np.zeros(g.shape[:-1] + (3,))
    g3[..., :dim] = g

    P3, A3, dPdT3 = stress_and_tangent(kin, theta, material)
    if medium:
        kc, dkc = medium_conductivity_with_derivative(kin.J, material)
    else:
        kc = np.full(kin.J.shape, material.k_theta)
        dkc = np.zeros(kin.J.shape)
    Jk = kin.J * kc
    y = np.einsum("...JL,...L->...J", kin.Cinv, g3)
    v = Jk[..., None] * y  # equals -Q

    r = np.zeros((E, n, ndpn))
    r[..., :dim] = np.einsum("eq,eqaJ,eqiJ->eia", w, P3[..., :dim, :dim], dN)
    r[..., dim] = np.einsum("eq,eqJ,eqiJ->ei", w, v[..., :dim], dN)
    wN = w[..., None] * N  # (E, Q, n)
    if body is not None:
        r[..., :dim] -= np.einsum("eqi,a->eia", wN, body)
    if source:
        r[..., dim] -= source * wN.sum(axis=1)

    A = A3[..., :dim, :dim, :dim, :dim]
    reg = []
    if medium:
        b1, b2 = material.beta1, material.beta2
        for c, pair in enumerate(ROTATION_PAIRS[: n_aux(dim)]):
            try:
                f, df, d2f = rotation_proxy(kin.F, pair)
            except DegenerateDistortion:
                raise
            df = df[..., :dim, :dim]
            pc = fields[..., dim + 1 + c]
            pq = (N @ pc.T).T
            gp = np.einsum("ei,eqiJ->eqJ", pc, dN)
            e = f - pq / d
            r[..., :dim] += np.einsum("eq,eqaJ,eqiJ->eia", w * b1 * e, df, dN)
            r[..., dim + 1 + c] = np.einsum("eqi,eq->ei", wN, -b1 / d * e) + b2 * np.einsum(
                "eq,eqJ,eqiJ->ei", w, gp, dN
            )
            if want_k:
                A = A + b1 * (
                    np.einsum("...aJ,...bL->...aJbL", df, df)
                    + e[..., None, None, None, None] * d2f[..., :dim, :dim, :dim, :dim]
                )
                reg.append(df)

    r = r.reshape(E, n * ndpn)
    if not want_k:
        return r, None

    K = np.zeros((E, n, ndpn, n, ndpn))
    wdN = w[..., None, None] * dN
    K[:, :, :dim, :, :dim] = _stiffness(wdN, A, dN)
    K[:, :, :dim, :, dim] = _einsum("eqiJ,eqaJ,qk->eiak", wdN, dPdT3[..., :dim, :dim], N)
    K[:, :, dim, :, dim] = _coupling(wdN, Jk[..., None, None] * kin.Cinv[..., :dim, :dim], dN)

    # d(J k C^-1 g)_J / dF_bL
    H = np.swapaxes(kin.Finv, -1, -2)
    z = np.einsum("...Mb,...M->...b", kin.Finv, g3)
    D = ((kc + kin.J * dkc) * kin.J)[..., None, None, None] * np.einsum("...J,...bL->...JbL", y, H)
    D -= Jk[..., None, None, None] * (
        np.einsum("...Jb,...L->...JbL", kin.Finv, y) + np.einsum("...JL,...b->...JbL", kin.Cinv, z)
    )
    K[:, :, dim, :, :dim] = _stiffness(wdN, D[..., None, :dim, :dim, :dim], dN)[:, :, 0]

    if medium:
        b1, b2 = material.beta1, material.beta2
        Kpp = b1 / d**2 * np.einsum("eqi,qk->eik", wN, N) + b2 * np.einsum("eqiJ,eqkJ->eik", wdN, dN)
        for c, df in enumerate(reg):
            col = dim + 1 + c
            Kup = _einsum("eqiJ,eqaJ,qk->eiak", wdN, df, N) * (-b1 / d)
            K[:, :, :dim, :, col] = Kup
            K[:, :, col, :, :dim] = np.transpose(Kup, (0, 3, 1, 2))
            K[:, :, col, :, col] = Kpp
    return r, K.reshape(E, n * ndpn, n * ndpn)


def _load(load, dim):
    if load is None:
        return None, 0.0
    body, source = load
    if body is not None:
        body = np.asarray(body, dtype=float)
        if not np.any(body):
            body = None
        elif body.shape != (dim,):
            raise ValueError(f"body force must have {dim} components")
    return body, float(source or 0.0)


def _fd_tangent(material, fields, sh, load, d, h=1e-7):
    E, n, ndpn = fields.shape
    flat = fields.reshape(E, n * ndpn)
    K = np.zeros((E, n * ndpn, n * ndpn))
    for j in range(n * ndpn):
        step = h * (1.0 + np.abs(flat[:, j]))
        plus = flat.copy()
        plus[:, j] += step
        minus = flat.copy()
        minus[:, j] -= step
        rp = _analytic(material, plus.reshape(E, n, ndpn), sh, load, d, want_k=False)[0]
        rm = _analytic(material, minus.reshape(E, n, ndpn), sh, load, d, want_k=False)[0]
        K[:, :, j] = (rp - rm) / (2.0 * step[:, None])
    return K


def element_system(element, X_nodes, fields, material, load=None, d=1.0, tangent="analytic") -> ElementSystem:
    """Residual and tangent of a single element.

    ``element`` is an :class:`~thirdmedium.mesh.Element` or a kind string;
    ``fields`` has shape (n, ndpn).
    """
    kind = element if isinstance(element, str) else element.kind
    X = np.asarray(X_nodes, dtype=float)[None]
    r, k = block_system(kind, material, X, np.asarray(fields, dtype=float)[None], load=load, d=d, tangent=tangent)
    return ElementSystem(r=r[0], k=k[0])


def element_energy(kind, X_nodes, fields, material, d=1.0, include_regularization=True) -> float:
    """Integrated stored energy of one element at fixed temperature.

    Excludes the conduction term, so only its displacement (and p) variation
    is meaningful. Used as an independent check of the mechanical rows.
    """
    X = np.asarray(X_nodes, dtype=float)[None]
    fields = np.asarray(fields, dtype=float)
    sh = batch_shape_eval(kind, X)
    dim = X.shape[2]
    U, T = fields[:, :dim], fields[:, dim]
    F = np.eye(dim) + np.einsum("ia,qiJ->qaJ", U, sh.gradN_ref[0])
    kin = kinematic_state(F)
    theta = sh.N @ T
    if isinstance(material, SolidParams):
        psi = solid_energy(kin, theta, material)
    else:
        psi = medium_energy(kin, theta, material)
        if include_regularization:
            m = n_aux(dim)
            pn = fields[:, dim + 1 : dim + 1 + m]
            f = np.stack([rotation_proxy(kin.F, pr)[0] for pr in ROTATION_PAIRS[:m]], axis=-1)
            pq = sh.N @ pn
            gp = np.einsum("ic,qiJ->qcJ", pn, sh.gradN_ref[0])
            psi = psi + regularization_density(f, pq, gp, material.beta1, material.beta2, d)
    return float(np.sum(sh.detJ_ref[0] * psi))
