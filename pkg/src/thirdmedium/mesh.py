"""Meshes with region and node-set tagging.

Structured presets cover the rectilinear benchmarks (single block, two
blocks, wavy micro-scale interface, 3D block with plate). Curved geometries
are read from the line-oriented text format handled by :func:`load_mesh`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, TextIO

import numpy as np

from .shapes import DIM_OF_KIND, NODES_PER_KIND, reference_jacobians

SOLID = "solid"
THIRD_MEDIUM = "third_medium"
ROLES = (SOLID, THIRD_MEDIUM)


class MeshError(ValueError):
    """Invalid mesh input or parameters."""


@dataclass(frozen=True)
class Region:
    name: str
    role: str


@dataclass(frozen=True)
class Element:
    id: int
    kind: str
    nodes: tuple[int, ...]
    region: str


@dataclass(frozen=True)
class ElementBlock:
    """Elements sharing kind and region, stored as arrays for batch evaluation."""

    kind: str
    region: str
    role: str
    ids: np.ndarray
    conn: np.ndarray


@dataclass(frozen=True)
class Mesh:
    dim: int
    X: np.ndarray
    elements: tuple[Element, ...]
    regions: dict[str, Region]
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0]

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def blocks(self) -> tuple[ElementBlock, ...]:
        groups: dict[tuple[str, str], list[Element]] = {}
        for el in self.elements:
            groups.setdefault((el.kind, el.region), []).append(el)
        out = []
        for (kind, region), els in groups.items():
            out.append(
                ElementBlock(
                    kind=kind,
                    region=region,
                    role=self.regions[region].role,
                    ids=np.array([e.id for e in els], dtype=np.int64),
                    conn=np.array([e.nodes for e in els], dtype=np.int64),
                )
            )
        return tuple(out)

    @cached_property
    def medium_nodes(self) -> np.ndarray:
        """Sorted ids of nodes touched by at least one third-medium element."""
        ids = [b.conn.ravel() for b in self.blocks if b.role == THIRD_MEDIUM]
        if not ids:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(ids))

    @property
    def has_medium(self) -> bool:
        return any(r.role == THIRD_MEDIUM for r in self.regions.values())

    def count_by_role(self) -> dict[str, int]:
        out = {role: 0 for role in ROLES}
        for el in self.elements:
            out[self.regions[el.region].role] += 1
        return out

    def node_set(self, name: str) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise MeshError(f"unknown node set {name!r}") from None


def build_mesh(X, elements: Iterable[Element], regions, node_sets=None) -> Mesh:
    """Assemble and validate a :class:`Mesh`."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] not in (2, 3):
        raise MeshError("node coordinates must have shape (n, 2) or (n, 3)")
    if not np.all(np.isfinite(X)):
        raise MeshError("non-finite node coordinates")
    dim = X.shape[1]
    elements = tuple(elements)
    regions = {r.name: r for r in regions} if not isinstance(regions, dict) else dict(regions)
    for r in regions.values():
        if r.role not in ROLES:
            raise MeshError(f"region {r.name!r}: unknown role {r.role!r}")
    for i, el in enumerate(elements):
        if el.id != i:
            raise MeshError(f"element ids must be dense 0..E-1 (found {el.id} at position {i})")
        if el.kind not in NODES_PER_KIND:
            raise MeshError(f"element {el.id}: unknown kind {el.kind!r}")
        if DIM_OF_KIND[el.kind] != dim:
            raise MeshError(f"element {el.id}: kind {el.kind} inconsistent with dim {dim}")
        if len(el.nodes) != NODES_PER_KIND[el.kind]:
            raise MeshError(f"element {el.id}: {el.kind} needs {NODES_PER_KIND[el.kind]} nodes")
        if el.region not in regions:
            raise MeshError(f"element {el.id}: undefined region {el.region!r}")
        if min(el.nodes) < 0 or max(el.nodes) >= len(X):
            raise MeshError(f"element {el.id}: undefined node")
    sets = {}
    for name, ids in (node_sets or {}).items():
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(X)):
            raise MeshError(f"node set {name!r}: undefined node")
        sets[name] = ids
    mesh = Mesh(dim=dim, X=X, elements=elements, regions=regions, node_sets=sets)
    for b in mesh.blocks:
        det = reference_jacobians(b.kind, X[b.conn])
        bad = np.nonzero(np.any(det <= 0.0, axis=1))[0]
        if bad.size:
            raise MeshError(f"element {int(b.ids[bad[0]])}: non-positive reference Jacobian")
    return mesh


def domain_extent(mesh: Mesh) -> float:
    """Largest bounding-box edge of the reference configuration."""
    if mesh.n_nodes == 0:
        raise MeshError("empty mesh")
    return float(np.max(mesh.X.max(axis=0) - mesh.X.min(axis=0)))


# ---------------------------------------------------------------------------
# text format


def load_mesh(stream: TextIO | str) -> Mesh:
    """Parse the line-oriented mesh format.

    ``stream`` is a file object or the text itself. Errors carry line numbers.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    dim = None
    nodes: dict[int, tuple[float, ...]] = {}
    regions: dict[str, Region] = {}
    raw_elements: list[tuple[int, int, str, str, tuple[int, ...]]] = []
    sets: dict[str, list[int]] = {}

    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        try:
            if key == "dim":
                if len(tok) != 2 or tok[1] not in ("2", "3"):
                    raise MeshError("expected 'dim 2' or 'dim 3'")
                dim = int(tok[1])
            elif key == "node":
                if dim is None:
                    raise MeshError("node before dim header")
                if len(tok) != 2 + dim:
                    raise MeshError(f"node needs id and {dim} coordinates")
                nid = int(tok[1])
                if nid in nodes:
                    raise MeshError(f"duplicate node {nid}")
                nodes[nid] = tuple(float(v) for v in tok[2:])
            elif key == "region":
                if len(tok) != 3:
                    raise MeshError("expected 'region <name> <role>'")
                if tok[2] not in ROLES:
                    raise MeshError(f"unknown role {tok[2]!r}")
                regions[tok[1]] = Region(tok[1], tok[2])
            elif key == "element":
                if len(tok) < 4:
                    raise MeshError("expected 'element <id> <kind> <region> <nodes...>'")
                kind = tok[2]
                if kind not in NODES_PER_KIND:
                    raise MeshError(f"unknown element kind {kind!r}")
                conn = tuple(int(v) for v in tok[4:])
                if len(conn) != NODES_PER_KIND[kind]:
                    raise MeshError(f"{kind} needs {NODES_PER_KIND[kind]} nodes, got {len(conn)}")
                raw_elements.append((lineno, int(tok[1]), kind, tok[3], conn))
            elif key == "nodeset":
                if len(tok) < 2:
                    raise MeshError("expected 'nodeset <name> <ids...>'")
                sets.setdefault(tok[1], []).extend(int(v) for v in tok[2:])
            else:
                raise MeshError(f"unknown keyword {key!r}")
        except MeshError as exc:
            raise MeshError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise MeshError(f"line {lineno}: malformed number ({exc})") from None

    if dim is None:
        raise MeshError("missing 'dim' header")
    n = len(nodes)
    if sorted(nodes) != list(range(n)):
        raise MeshError("node ids must be dense 0..N-1")
    X = np.array([nodes[i] for i in range(n)], dtype=float).reshape(n, dim)
    raw_elements.sort(key=lambda t: t[1])
    elements = []
    for lineno, eid, kind, region, conn in raw_elements:
        if region not in regions:
            raise MeshError(f"line {lineno}: element {eid}: undefined region {region!r}")
        bad = [c for c in conn if c < 0 or c >= n]
        if bad:
            raise MeshError(f"line {lineno}: element {eid}: undefined node {bad[0]}")
        elements.append(Element(eid, kind, conn, region))
    for name, ids in sets.items():
        bad = [i for i in ids if i < 0 or i >= n]
        if bad:
            raise MeshError(f"node set {name!r}: undefined node {bad[0]}")
    return build_mesh(X, elements, regions, {k: np.array(v, dtype=np.int64) for k, v in sets.items()})


def dump_mesh(mesh: Mesh) -> str:
    """Serialise ``mesh`` in the text format accepted by :func:`load_mesh`."""
    out = [f"dim {mesh.dim}"]
    for i, x in enumerate(mesh.X):
        out.append("node %d %s" % (i, " ".join(repr(float(v)) for v in x)))
    for r in mesh.regions.values():
        out.append(f"region {r.name} {r.role}")
    for el in mesh.elements:
        out.append(f"element {el.id} {el.kind} {el.region} " + " ".join(map(str, el.nodes)))
    for name, ids in mesh.node_sets.items():
        out.append(f"nodeset {name} " + " ".join(map(str, ids.tolist())))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# structured presets

Curve = Callable[[np.ndarray], np.ndarray]


def _flat(value: float) -> Curve:
    return lambda x: np.full_like(np.asarray(x, dtype=float), value)


def _layered_2d(nx: int, width: float, interfaces: list[Curve], layers: list[tuple[str, int]], kind: str):
    """Columns of ``nx`` cells stacked in layers between y-curves.

    Returns coordinates, element list and the node-row index of every interface.
    """
    xs = np.linspace(0.0, width, nx + 1)
    rows = []
    iface_rows = [0]
    for j, (_, ny) in enumerate(layers):
        lo, hi = interfaces[j](xs), interfaces[j + 1](xs)
        start = 0 if j == 0 else 1
        for r in range(start, ny + 1):
            rows.append(lo + (hi - lo) * r / ny)
        iface_rows.append(len(rows) - 1)
    X = np.array([[x, y] for ys in rows for x, y in zip(xs, ys)])

    def nid(r, c):
        return r * (nx + 1) + c

    elements = []
    for j, (region, ny) in enumerate(layers):
        r0 = iface_rows[j]
        for r in range(r0, r0 + ny):
            for c in range(nx):
                n00, n10, n11, n01 = nid(r, c), nid(r, c + 1), nid(r + 1, c + 1), nid(r + 1, c)
                if kind == "Q1":
                    elements.append(Element(len(elements), "Q1", (n00, n10, n11, n01), region))
                else:
                    elements.append(Element(len(elements), "T1", (n00, n10, n11), region))
                    elements.append(Element(len(elements), "T1", (n00, n11, n01), region))
    row_of = lambda r: np.array([nid(r, c) for c in range(nx + 1)], dtype=np.int64)  # noqa: E731
    return X, elements, [row_of(r) for r in iface_rows], row_of


def _probe(X, nodes, point):
    """Single-node set: the member of ``nodes`` closest (in-plane) to ``point``."""
    dist = np.linalg.norm(X[nodes, : len(point)] - np.asarray(point), axis=1)
    return nodes[[int(np.argmin(dist))]]


def _with_probes(X, sets, point):
    sets["probe_lower"] = _probe(X, sets["gap_lower"], point)
    sets["probe_upper"] = _probe(X, sets["gap_upper"], point)
    return sets


def _check_res(**res):
    for k, v in res.items():
        if int(v) < 1:
            raise MeshError(f"resolution {k} must be >= 1")


def _block2d(p):
    nx, ny_s, ny_m = p.get("nx", 32), p.get("ny_solid", 32), p.get("ny_medium", 8)
    _check_res(nx=nx, ny_solid=ny_s, ny_medium=ny_m)
    width, h_s, h_m = p.get("width", 1.0), p.get("solid_height", 2.0), p.get("medium_height", 0.25)
    kind = p.get("element", "Q1")
    X, els, iface, _ = _layered_2d(
        nx, width, [_flat(0.0), _flat(h_m), _flat(h_m + h_s)], [("medium", ny_m), ("solid", ny_s)], kind
    )
    regions = [Region("medium", THIRD_MEDIUM), Region("solid", SOLID)]
    sets = {
        "bottom": iface[0],
        "top": iface[2],
        "loaded_patch": iface[2],
        "gap_lower": iface[0],
        "gap_upper": iface[1],
        "sides": _sides_2d(X, width),
    }
    return build_mesh(X, els, regions, _with_probes(X, sets, [0.5 * width]))


def _sides_2d(X, width):
    tol = 1e-9 * max(width, 1.0)
    return np.nonzero((np.abs(X[:, 0]) < tol) | (np.abs(X[:, 0] - width) < tol))[0]


def _two_blocks2d(p):
    nx = p.get("nx", 64)
    ny_l, ny_m, ny_u = p.get("ny_lower", 64), p.get("ny_medium", 16), p.get("ny_upper", 64)
    _check_res(nx=nx, ny_lower=ny_l, ny_medium=ny_m, ny_upper=ny_u)
    width = p.get("width", 1.0)
    h_l, h_m, h_u = p.get("lower_height", 1.0), p.get("medium_height", 0.25), p.get("upper_height", 1.0)
    kind = p.get("element", "Q1")
    ys = np.cumsum([0.0, h_l, h_m, h_u])
    X, els, iface, _ = _layered_2d(
        nx,
        width,
        [_flat(y) for y in ys],
        [("lower", ny_l), ("medium", ny_m), ("upper", ny_u)],
        kind,
    )
    regions = [Region("lower", SOLID), Region("medium", THIRD_MEDIUM), Region("upper", SOLID)]
    top = iface[3]
    patch = top[X[top, 0] >= 0.5 * width - 1e-12]
    sets = {
        "bottom": iface[0],
        "top": top,
        "loaded_patch": patch,
        "gap_lower": iface[1],
        "gap_upper": iface[2],
        "sides": _sides_2d(X, width),
    }
    return build_mesh(X, els, regions, _with_probes(X, sets, [0.5 * width]))


def _wavy_interface2d(p):
    for key in ("amplitude", "wavelength"):
        if key in p and p[key] is None:
            raise MeshError(f"wavy_interface2d requires {key}")
    amp = p.get("amplitude", 0.05)
    wavelength = p.get("wavelength", 2.0 / 3.0)
    if amp is None or wavelength is None or wavelength <= 0 or amp < 0:
        raise MeshError("wavy_interface2d requires amplitude >= 0 and wavelength > 0")
    width = p.get("width", 1.0)
    h_l, h_u = p.get("lower_height", 1.0), p.get("upper_height", 1.0)
    gap_min = p.get("gap_min", 0.1)
    phase = p.get("upper_phase", 0.0)
    upper_amp = p.get("upper_amplitude", 0.0)
    nx = p.get("nx", 24)
    ny_l, ny_m, ny_u = p.get("ny_lower", 8), p.get("ny_medium", 6), p.get("ny_upper", 8)
    _check_res(nx=nx, ny_lower=ny_l, ny_medium=ny_m, ny_upper=ny_u)
    kind = p.get("element", "Q1")
    k = 2.0 * np.pi / wavelength
    # peaks of the lower surface at x = 0, wavelength, ...; troughs half-way
    lower = lambda x: h_l + amp * np.cos(k * np.asarray(x))  # noqa: E731
    base_u = h_l + amp + gap_min
    upper = lambda x: base_u + upper_amp * (1.0 - np.cos(k * np.asarray(x) + phase))  # noqa: E731
    top = base_u + upper_amp * 2.0 + h_u
    X, els, iface, _ = _layered_2d(
        nx,
        width,
        [_flat(0.0), lower, upper, _flat(top)],
        [("lower", ny_l), ("medium", ny_m), ("upper", ny_u)],
        kind,
    )
    regions = [Region("lower", SOLID), Region("medium", THIRD_MEDIUM), Region("upper", SOLID)]
    sets = {
        "bottom": iface[0],
        "top": iface[3],
        "loaded_patch": iface[3],
        "gap_lower": iface[1],
        "gap_upper": iface[2],
        "sides": _sides_2d(X, width),
    }
    return build_mesh(X, els, regions, _with_probes(X, sets, [0.5 * width]))


def _block_plate3d(p):
    n = p.get("n_inplane", 8)
    n_th = p.get("layers", p.get("n_th", 2))
    n_lo, n_up = p.get("layers_lower", 4), p.get("layers_upper", 4)
    _check_res(n_inplane=n, layers=n_th, layers_lower=n_lo, layers_upper=n_up)
    h_lo, h_m, h_up = p.get("lower_height", 2.0), p.get("medium_height", 0.5), p.get("upper_height", 1.0)
    size = p.get("size", 8.0)
    patch = p.get("patch", 4.0)
    quarter = p.get("quarter", True)
    if quarter:
        lo, hi = 0.0, size / 2.0
        plo, phi = 0.0, patch / 2.0
    else:
        lo, hi = 0.0, size
        plo, phi = (size - patch) / 2.0, (size + patch) / 2.0
    xs = np.linspace(lo, hi, n + 1)
    zs = [0.0]
    for h, m in ((h_lo, n_lo), (h_m, n_th), (h_up, n_up)):
        z0 = zs[-1]
        zs.extend(z0 + h * np.arange(1, m + 1) / m)
    zs = np.array(zs)
    nz = len(zs)
    npl = (n + 1) ** 2
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    plane = np.column_stack([gx.ravel(), gy.ravel()])
    X = np.vstack([np.column_stack([plane, np.full(npl, z)]) for z in zs])

    def nid(k, j, i):
        return k * npl + j * (n + 1) + i

    layer_region = ["lower"] * n_lo + ["medium"] * n_th + ["upper"] * n_up
    els = []
    for k, region in enumerate(layer_region):
        for j in range(n):
            for i in range(n):
                b = (nid(k, j, i), nid(k, j, i + 1), nid(k, j + 1, i + 1), nid(k, j + 1, i))
                t = tuple(v + npl for v in b)
                els.append(Element(len(els), "H1", b + t, region))
    regions = [Region("lower", SOLID), Region("medium", THIRD_MEDIUM), Region("upper", SOLID)]
    tol = 1e-9 * size
    z_top = zs[-1]
    top = np.nonzero(np.abs(X[:, 2] - z_top) < tol)[0]
    in_patch = (X[top, 0] >= plo - tol) & (X[top, 0] <= phi + tol) & (X[top, 1] >= plo - tol) & (X[top, 1] <= phi + tol)
    sets = {
        "bottom": np.nonzero(np.abs(X[:, 2]) < tol)[0],
        "top": top,
        "loaded_patch": top[in_patch],
        "gap_lower": np.nonzero(np.abs(X[:, 2] - h_lo) < tol)[0],
        "gap_upper": np.nonzero(np.abs(X[:, 2] - (h_lo + h_m)) < tol)[0],
        "sides": np.nonzero(
            (np.abs(X[:, 0] - lo) < tol) | (np.abs(X[:, 0] - hi) < tol) | (np.abs(X[:, 1] - lo) < tol) | (np.abs(X[:, 1] - hi) < tol)
        )[0],
    }
    centre = 0.5 * (plo + phi) if not quarter else 0.0
    _with_probes(X, sets, [centre, centre])
    if quarter:
        sets["sym_x"] = np.nonzero(np.abs(X[:, 0] - lo) < tol)[0]
        sets["sym_y"] = np.nonzero(np.abs(X[:, 1] - lo) < tol)[0]
    return build_mesh(X, els, regions, sets)


PRESETS = {
    "block2d": _block2d,
    "two_blocks2d": _two_blocks2d,
    "wavy_interface2d": _wavy_interface2d,
    "block_plate3d": _block_plate3d,
}


def generate_preset_mesh(preset: str, params: dict | None = None) -> Mesh:
    """Build one of the structured benchmark meshes.

    Parameters
    ----------
    preset : one of ``block2d``, ``two_blocks2d``, ``wavy_interface2d``,
        ``block_plate3d``.
    params : resolution and geometry overrides, e.g. ``nx``, ``ny_solid``,
        ``element`` ("Q1" or "T1") for 2D presets, ``layers`` and ``quarter``
        for the 3D preset.
    """
    if preset not in PRESETS:
        raise MeshError(f"unknown preset {preset!r}")
    return PRESETS[preset](dict(params or {}))
