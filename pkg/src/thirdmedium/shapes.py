"""Linear shape functions and Gauss rules for T1, Q1 and H1 elements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NODES_PER_KIND = {"T1": 3, "Q1": 4, "H1": 8}
DIM_OF_KIND = {"T1": 2, "Q1": 2, "H1": 3}

# parent-domain corner coordinates, ordering matches the mesh convention
_Q1_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_H1_CORNERS = np.array(
    [
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ]
)
PARENT_CORNERS = {
    "T1": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    "Q1": _Q1_CORNERS,
    "H1": _H1_CORNERS,
}


class SingularMapping(ValueError):
    """Raised when the parent-to-reference Jacobian is singular."""


def _check_kind(kind: str) -> None:
    if kind not in NODES_PER_KIND:
        raise ValueError(f"unsupported element kind {kind!r}")


def shape_values(kind: str, xi) -> np.ndarray:
    """Shape function values at parent points ``xi`` of shape (..., dim)."""
    _check_kind(kind)
    xi = np.asarray(xi, dtype=float)
    if kind == "T1":
        r, s = xi[..., 0], xi[..., 1]
        return np.stack([1.0 - r - s, r, s], axis=-1)
    c = PARENT_CORNERS[kind]
    terms = 1.0 + xi[..., None, :] * c
    return np.prod(terms, axis=-1) / 2.0 ** c.shape[1]


def shape_derivatives(kind: str, xi) -> np.ndarray:
    """Parent-coordinate derivatives, shape (..., n_nodes, dim)."""
    _check_kind(kind)
    xi = np.asarray(xi, dtype=float)
    if kind == "T1":
        d = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.broadcast_to(d, xi.shape[:-1] + d.shape).copy()
    c = PARENT_CORNERS[kind]
    dim = c.shape[1]
    terms = 1.0 + xi[..., None, :] * c
    out = np.empty(xi.shape[:-1] + c.shape)
    for a in range(dim):
        others = np.prod(np.delete(terms, a, axis=-1), axis=-1)
        out[..., a] = c[:, a] * others
    return out / 2.0**dim


def quadrature(kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Return (points, weights) of the full Gauss rule for ``kind``.

    T1 uses the centroid with weight 1/2, Q1 a 2x2 and H1 a 2x2x2 rule.
    """
    _check_kind(kind)
    if kind == "T1":
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    g = 1.0 / np.sqrt(3.0)
    dim = DIM_OF_KIND[kind]
    # same ordering as the corners, so point q sits nearest node q
    pts = PARENT_CORNERS[kind] * g
    return pts.copy(), np.ones(2**dim)


@dataclass(frozen=True)
class ShapeEval:
    """Shape data at quadrature points of a batch of elements.

    Attributes
    ----------
    N : (Q, n) shape values at the quadrature points.
    gradN_ref : (E, Q, n, dim) gradients with respect to reference coordinates.
    detJ_ref : (E, Q) parent Jacobian determinant times quadrature weight.
    """

    N: np.ndarray
    gradN_ref: np.ndarray
    detJ_ref: np.ndarray


def shape_eval(kind: str, xi, X_nodes) -> ShapeEval:
    """Evaluate shape functions at a single parent point for one element.

    ``detJ_ref`` is the plain Jacobian determinant here (unit weight).
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    X = np.asarray(X_nodes, dtype=float)[None]
    N = shape_values(kind, xi)
    dN = shape_derivatives(kind, xi)
    grad, det = _map_gradients(dN, X)
    return ShapeEval(N=N[0], gradN_ref=grad[0, 0], detJ_ref=det[0, 0])


def _map_gradients(dN: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # dN (Q, n, dim), X (E, n, dim)
    jac = np.einsum("eia,qib->eqab", X, dN)
    det = np.linalg.det(jac)
    if np.any(np.abs(det) < 1e-300):
        raise SingularMapping("singular parent Jacobian")
    inv = np.linalg.inv(jac)
    grad = np.einsum("qib,eqba->eqia", dN, inv)
    return grad, det


def batch_shape_eval(kind: str, X: np.ndarray) -> ShapeEval:
    """Quadrature-point shape data for elements with coordinates ``X`` (E, n, dim)."""
    pts, w = quadrature(kind)
    N = shape_values(kind, pts)
    dN = shape_derivatives(kind, pts)
    grad, det = _map_gradients(dN, np.asarray(X, dtype=float))
    return ShapeEval(N=N, gradN_ref=grad, detJ_ref=det * w)


def reference_jacobians(kind: str, X: np.ndarray) -> np.ndarray:
    """Parent Jacobian determinants (E, Q) at the quadrature points, unweighted."""
    pts, _ = quadrature(kind)
    dN = shape_derivatives(kind, pts)
    jac = np.einsum("eia,qib->eqab", np.asarray(X, dtype=float), dN)
    return np.linalg.det(jac)


def inverse_map(kind: str, X_nodes: np.ndarray, x: np.ndarray, tol: float = 1e-12, max_iter: int = 30):
    """Parent coordinates of physical point ``x`` inside one element (Newton)."""
    X_nodes = np.asarray(X_nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    xi = np.full(X_nodes.shape[1], 1.0 / 3.0 if kind == "T1" else 0.0)
    for _ in range(max_iter):
        N = shape_values(kind, xi)
        res = N @ X_nodes - x
        jac = X_nodes.T @ shape_derivatives(kind, xi)
        try:
            step = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            return None
        xi = xi - step
        if np.max(np.abs(step)) < tol:
            break
    return xi


def inside_parent(kind: str, xi, eps: float = 1e-9) -> bool:
    if xi is None or not np.all(np.isfinite(xi)):
        return False
    if kind == "T1":
        return xi[0] >= -eps and xi[1] >= -eps and xi[0] + xi[1] <= 1.0 + eps
    return bool(np.all(np.abs(xi) <= 1.0 + eps))
