"""Derived fields, line profiles and file exports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .kinematics import kinematic_state
from .material import MediumParams, medium_conductivity, stress_and_tangent
from .mesh import ROLES, SOLID, THIRD_MEDIUM, Mesh
from .shapes import batch_shape_eval, inside_parent, inverse_map, shape_values
from .solver import DofMap, FieldState, LoadProgram, build_dof_map, nodal_fields

VTK_CELL_TYPES = {"T1": 5, "Q1": 9, "H1": 12}


@dataclass(frozen=True)
class NodalState:
    """Nodal unknowns split by field; ``p`` has zero columns without a medium."""

    displacement: np.ndarray
    temperature: np.ndarray
    p: np.ndarray


def as_nodal(mesh: Mesh, state, dofmap: DofMap | None = None) -> NodalState:
    """Accept a :class:`NodalState` or a :class:`FieldState` with its DOF map.

    Without a DOF map the p layout is inferred from the vector length.
    """
    if isinstance(state, NodalState):
        return state
    if dofmap is None:
        dofmap = _infer_dofmap(mesh, state.U.size)
    return NodalState(*nodal_fields(mesh, dofmap, state.U))


def _infer_dofmap(mesh: Mesh, n: int) -> DofMap:
    for layout in ("all", "medium"):
        dm = build_dof_map(mesh, LoadProgram(), layout)
        if dm.n_dofs == n:
            return dm
    raise ValueError(f"state length {n} does not match the mesh")


# ---------------------------------------------------------------------------
# derived fields


@dataclass(frozen=True)
class DerivedFields:
    """Quadrature-point and nodal-averaged Cauchy stress, pressure and spatial heat flux.

    ``qp`` maps each block index to a dict with ``ids``, ``sigma`` (E,Q,3,3),
    ``q`` (E,Q,3), ``pressure`` (E,Q) and ``weight`` (E,Q). ``nodal[role]``
    holds averages over quadrature points of that role only (NaN on nodes
    the role does not touch); ``display`` prefers solid values on shared
    nodes.
    """

    qp: dict
    nodal: dict
    display: dict


def derive_fields(mesh: Mesh, state, materials: dict, dofmap: DofMap | None = None) -> DerivedFields:
    nodal_state = as_nodal(mesh, state, dofmap)
    dim = mesh.dim
    qp = {}
    acc = {role: dict(w=np.zeros(mesh.n_nodes), sigma=np.zeros((mesh.n_nodes, 3, 3)),
                      q=np.zeros((mesh.n_nodes, 3)), pressure=np.zeros(mesh.n_nodes)) for role in ROLES}
    for bi, blk in enumerate(mesh.blocks):
        mat = materials[blk.region]
        sh = batch_shape_eval(blk.kind, mesh.X[blk.conn])
        U = nodal_state.displacement[blk.conn]
        T = nodal_state.temperature[blk.conn]
        F = np.eye(dim) + np.einsum("eia,eqiJ->eqaJ", U, sh.gradN_ref)
        kin = kinematic_state(F)
        theta = T[:, :1] + np.einsum("qi,ei->eq", sh.N, T - T[:, :1])
        P = stress_and_tangent(kin, theta, mat)[0]
        sigma = P @ np.swapaxes(kin.F, -1, -2) / kin.J[..., None, None]
        k = medium_conductivity(kin.J, mat) if isinstance(mat, MediumParams) else np.full(kin.J.shape, mat.k_theta)
        g = np.zeros(kin.J.shape + (3,))
        g[..., :dim] = np.einsum("ei,eqiJ->eqJ", T - T[:, :1], sh.gradN_ref)
        Q = -(kin.J * k)[..., None] * np.einsum("...JL,...L->...J", kin.Cinv, g)
        q = np.einsum("...aJ,...J->...a", kin.F, Q) / kin.J[..., None]
        pressure = -np.trace(sigma, axis1=-2, axis2=-1) / 3.0
        w = sh.detJ_ref
        qp[bi] = dict(ids=blk.ids, region=blk.region, sigma=sigma, q=q, pressure=pressure, weight=w)
        # each element spreads its weighted quadrature sums to all its nodes
        a = acc[blk.role]
        n = blk.conn.shape[1]
        nodes = blk.conn.ravel()
        ew = np.repeat(w.sum(axis=1), n)
        a["w"] += np.bincount(nodes, weights=ew, minlength=mesh.n_nodes)
        for name, val in (("sigma", sigma), ("q", q), ("pressure", pressure)):
            ev = np.einsum("eq,eq...->e...", w, val).reshape(len(w), -1)
            target = a[name].reshape(mesh.n_nodes, -1)
            for c in range(ev.shape[1]):
                target[:, c] += np.bincount(nodes, weights=np.repeat(ev[:, c], n), minlength=mesh.n_nodes)
    nodal = {}
    for role, a in acc.items():
        touched = a["w"] > 0
        inv = np.where(touched, 1.0 / np.where(touched, a["w"], 1.0), np.nan)
        nodal[role] = dict(
            sigma=a["sigma"] * inv[:, None, None],
            q=a["q"] * inv[:, None],
            pressure=a["pressure"] * inv,
            touched=touched,
        )
    display = {}
    solid_touch = nodal[SOLID]["touched"]
    for name in ("sigma", "q", "pressure"):
        s, m = nodal[SOLID][name], nodal[THIRD_MEDIUM][name]
        mask = solid_touch.reshape((-1,) + (1,) * (s.ndim - 1))
        display[name] = np.nan_to_num(np.where(mask, s, m))
    return DerivedFields(qp=qp, nodal=nodal, display=display)


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class Profile:
    points: np.ndarray
    s: np.ndarray
    values: np.ndarray
    missing: np.ndarray


def _field_values(mesh: Mesh, ns: NodalState, field: str) -> np.ndarray:
    comps = {"ux": 0, "uy": 1, "uz": 2}
    if field in ("theta", "temperature"):
        return ns.temperature
    if field in comps and comps[field] < mesh.dim:
        return ns.displacement[:, comps[field]]
    if field.startswith("p") and field[1:].isdigit() and int(field[1:]) - 1 < ns.p.shape[1]:
        return ns.p[:, int(field[1:]) - 1]
    raise ValueError(f"unknown field {field!r}")


def locate_points(mesh: Mesh, points: np.ndarray, coords: np.ndarray | None = None):
    """Containing element and parent coordinates for each point (-1 if outside)."""
    coords = mesh.X if coords is None else coords
    conn = [np.asarray(e.nodes) for e in mesh.elements]
    centroids = np.array([coords[c].mean(axis=0) for c in conn])
    tree = cKDTree(centroids)
    k = min(16, len(conn))
    owner = np.full(len(points), -1)
    xis = [None] * len(points)
    for i, x in enumerate(points):
        _, cand = tree.query(x, k=k)
        for e in np.atleast_1d(cand):
            el = mesh.elements[int(e)]
            xi = inverse_map(el.kind, coords[conn[e]], x)
            if xi is not None and inside_parent(el.kind, xi):
                owner[i], xis[i] = int(e), xi
                break
    return owner, xis


def extract_profile(mesh: Mesh, state, start, end, n_samples: int, field: str = "theta",
                    frame: str = "reference", dofmap: DofMap | None = None) -> Profile:
    """Sample ``field`` at ``n_samples`` equally spaced points on a segment.

    In the reference frame the points are material points (the segment is
    followed as it deforms); in the deformed frame they are spatial points.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    ns = as_nodal(mesh, state, dofmap)
    values_n = _field_values(mesh, ns, field)
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n_samples)
    pts = start + t[:, None] * (end - start)
    if frame == "reference":
        coords = mesh.X
    elif frame == "deformed":
        coords = mesh.X + ns.displacement
    else:
        raise ValueError("frame must be 'reference' or 'deformed'")
    owner, xis = locate_points(mesh, pts, coords)
    vals = np.full(n_samples, np.nan)
    for i, e in enumerate(owner):
        if e < 0:
            continue
        el = mesh.elements[e]
        vals[i] = shape_values(el.kind, xis[i]) @ values_n[list(el.nodes)]
    return Profile(points=pts, s=t * np.linalg.norm(end - start), values=vals, missing=np.flatnonzero(owner < 0))


# ---------------------------------------------------------------------------
# exports


def _fmt(v) -> str:
    return format(float(v), ".17g")


def vtk_text(mesh: Mesh, state, derived: DerivedFields | None = None, omit_medium: bool = False,
             dofmap: DofMap | None = None, title: str = "thirdmedium") -> str:
    """Legacy ASCII VTK unstructured grid of the deformed mesh."""
    ns = as_nodal(mesh, state, dofmap)
    dim = mesh.dim
    out = io.StringIO()
    w = out.write
    w("# vtk DataFile Version 3.0\n")
    w(title.replace("\n", " ")[:255] + "\n")
    w("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    x = np.zeros((mesh.n_nodes, 3))
    x[:, :dim] = mesh.X + ns.displacement
    w(f"POINTS {mesh.n_nodes} double\n")
    for row in x:
        w(" ".join(_fmt(v) for v in row) + "\n")
    roles = {name: r.role for name, r in mesh.regions.items()}
    cells = [e for e in mesh.elements if not (omit_medium and roles[e.region] == THIRD_MEDIUM)]
    size = sum(len(e.nodes) + 1 for e in cells)
    w(f"CELLS {len(cells)} {size}\n")
    for e in cells:
        w(f"{len(e.nodes)} " + " ".join(str(n) for n in e.nodes) + "\n")
    w(f"CELL_TYPES {len(cells)}\n")
    for e in cells:
        w(f"{VTK_CELL_TYPES[e.kind]}\n")
    region_ids = {name: i for i, name in enumerate(sorted(mesh.regions))}
    w(f"CELL_DATA {len(cells)}\nSCALARS region_id int 1\nLOOKUP_TABLE default\n")
    for e in cells:
        w(f"{region_ids[e.region]}\n")
    w(f"POINT_DATA {mesh.n_nodes}\n")
    u = np.zeros((mesh.n_nodes, 3))
    u[:, :dim] = ns.displacement
    _vectors(w, "displacement", u)
    _scalars(w, "temperature", ns.temperature)
    for c in range(ns.p.shape[1]):
        _scalars(w, f"p{c + 1}", ns.p[:, c])
    if derived is not None:
        sig = derived.display["sigma"]
        w("TENSORS sigma double\n")
        for t in sig:
            for r in t:
                w(" ".join(_fmt(v) for v in r) + "\n")
        for i, j, name in ((0, 0, "xx"), (1, 1, "yy"), (2, 2, "zz"), (0, 1, "xy"), (0, 2, "xz"), (1, 2, "yz")):
            _scalars(w, f"sigma_{name}", sig[:, i, j])
        _scalars(w, "pressure", derived.display["pressure"])
        _vectors(w, "heat_flux", derived.display["q"])
    return out.getvalue()


def _scalars(w, name, values):
    w(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
    for v in values:
        w(_fmt(v) + "\n")


def _vectors(w, name, values):
    w(f"VECTORS {name} double\n")
    for row in values:
        w(" ".join(_fmt(v) for v in row) + "\n")


def export_vtk(mesh: Mesh, state, derived: DerivedFields | None, path, omit_medium: bool = False,
               dofmap: DofMap | None = None) -> Path:
    path = Path(path)
    path.write_text(vtk_text(mesh, state, derived, omit_medium=omit_medium, dofmap=dofmap))
    return path


HISTORY_HEADER = ("step", "lambda", "dlambda", "iterations", "residual", "gap")


def export_history(history, path) -> Path:
    """Write per-step records as CSV."""
    if not history.records:
        raise ValueError("history is empty")
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HISTORY_HEADER)
        for r in history.records:
            wr.writerow([r.step, _fmt(r.lam), _fmt(r.dlam), r.iterations, _fmt(r.residual), _fmt(r.gap)])
    return path


def save_state(path, state: FieldState, dofmap: DofMap, **meta) -> Path:
    """Snapshot a converged state as ``.npz`` (vector, load factor, layout)."""
    path = Path(path)
    np.savez(path, U=state.U, lam=state.lam, index=dofmap.index,
             **{f"meta_{k}": np.asarray(v) for k, v in meta.items()})
    return path


def load_state(path):
    """Inverse of :func:`save_state`; returns (FieldState, index array, meta dict)."""
    with np.load(path, allow_pickle=False) as data:
        meta = {k[5:]: data[k][()] for k in data.files if k.startswith("meta_")}
        return FieldState(data["U"].copy(), float(data["lam"])), data["index"].copy(), meta


__all__ = [
    "DerivedFields", "NodalState", "Profile", "as_nodal", "derive_fields", "extract_profile",
    "export_history", "export_vtk", "load_state", "locate_points", "save_state", "vtk_text",
]
