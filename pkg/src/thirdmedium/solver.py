"""Global DOF management, assembly, Newton iterations and load stepping."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .element import block_system, dofs_per_node, n_aux
from .kinematics import DegenerateDistortion, ElementInversion
from .material import MediumParams, SolidParams
from .mesh import THIRD_MEDIUM, Mesh, domain_extent
from .shapes import NODES_PER_KIND, batch_shape_eval, shape_derivatives, shape_values

log = logging.getLogger(__name__)

_COMPONENT_ALIASES = {
    "ux": "ux", "u_x": "ux", "uy": "uy", "u_y": "uy", "uz": "uz", "u_z": "uz",
    "theta": "theta", "t": "theta", "temperature": "theta",
}


class ProgramError(ValueError):
    """Inconsistent load program or material table."""


class NewtonFailure(RuntimeError):
    """Retryable failure of a Newton solve."""


class SolverAbort(RuntimeError):
    """Load stepping gave up; carries the last converged state."""

    def __init__(self, message, lam, state, history):
        super().__init__(message)
        self.lam = lam
        self.state = state
        self.history = history


# ---------------------------------------------------------------------------
# program description


@dataclass(frozen=True)
class DirichletItem:
    node_set: str
    component: str
    value: float


@dataclass(frozen=True)
class NeumannItem:
    """Surface load on the boundary facets spanned by ``node_set``.

    ``kind`` is "traction" (vector per unit reference area) or "flux"
    (heat supplied per unit reference area).
    """

    node_set: str
    kind: str
    value: tuple[float, ...] | float


@dataclass(frozen=True)
class StepControls:
    dlambda0: float = 0.1
    dlambda_min: float = 1e-5
    dlambda_max: float = 0.25
    growth: float = 1.5
    fast_iter: int = 6
    max_iter: int = 25
    tol_abs: float = 1e-8
    tol_rel: float = 1e-10

    def __post_init__(self):
        if not (0 < self.dlambda_min <= self.dlambda0 <= self.dlambda_max):
            raise ProgramError("step controls need 0 < dlambda_min <= dlambda0 <= dlambda_max")


@dataclass(frozen=True)
class LoadProgram:
    dirichlet: tuple[DirichletItem, ...] = ()
    neumann: tuple[NeumannItem, ...] = ()
    body_forces: dict = field(default_factory=dict)
    heat_sources: dict = field(default_factory=dict)
    controls: StepControls = field(default_factory=StepControls)
    theta_initial: float = 0.0
    stops: tuple[float, ...] = ()
    gap: tuple[str, str, int] | None = None


# ---------------------------------------------------------------------------
# dof map


@dataclass(frozen=True)
class DofMap:
    """Node-major, unknown-minor numbering.

    ``index[node, field]`` is the global id or -1 where a field is absent.
    ``parked`` lists auxiliary DOFs on nodes without third-medium elements;
    they carry the trivial equation p = 0.
    """

    index: np.ndarray
    field_names: tuple[str, ...]
    n_dofs: int
    constrained: np.ndarray
    prescribed: np.ndarray
    parked: np.ndarray

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    @property
    def n_free(self) -> int:
        return int(self.n_dofs - self.constrained.sum())

    def column(self, name: str) -> int:
        return self.field_names.index(name)


def _node_layout(mesh: Mesh, p_layout: str):
    dim = mesh.dim
    names = ("ux", "uy", "uz")[:dim] + ("theta",)
    if not mesh.has_medium:
        return names, np.ones((mesh.n_nodes, dim + 1), dtype=bool)
    m = n_aux(dim)
    names = names + tuple(f"p{i + 1}" for i in range(m))
    present = np.ones((mesh.n_nodes, dim + 1 + m), dtype=bool)
    if p_layout == "medium":
        present[:, dim + 1 :] = False
        present[mesh.medium_nodes, dim + 1 :] = True
    elif p_layout != "all":
        raise ProgramError("p_layout must be 'all' or 'medium'")
    return names, present


def build_dof_map(mesh: Mesh, program: LoadProgram, p_layout: str = "all") -> DofMap:
    """Number all unknowns and mark the Dirichlet-constrained ones.

    With ``p_layout="all"`` every node of a mesh containing a third medium
    carries the auxiliary unknowns; ``"medium"`` restricts them to nodes of
    third-medium elements.
    """
    names, present = _node_layout(mesh, p_layout)
    index = np.full(present.shape, -1, dtype=np.int64)
    index[present] = np.arange(int(present.sum()))
    n = int(present.sum())
    constrained = np.zeros(n, dtype=bool)
    prescribed = np.full(n, np.nan)
    for item in program.dirichlet:
        comp = _COMPONENT_ALIASES.get(item.component.lower())
        if comp is None:
            if item.component.lower().startswith("p"):
                raise ProgramError(f"Dirichlet item on auxiliary field {item.component!r} is not permitted")
            raise ProgramError(f"unknown component {item.component!r}")
        if comp not in names:
            raise ProgramError(f"component {item.component!r} does not exist in {mesh.dim}D")
        nodes = mesh.node_set(item.node_set)
        ids = index[nodes, names.index(comp)]
        clash = constrained[ids] & (prescribed[ids] != item.value)
        if np.any(clash):
            raise ProgramError(f"conflicting Dirichlet values on {comp} of node set {item.node_set!r}")
        constrained[ids] = True
        prescribed[ids] = item.value
    parked = np.zeros(0, dtype=np.int64)
    if mesh.has_medium:
        mask = np.ones(mesh.n_nodes, dtype=bool)
        mask[mesh.medium_nodes] = False
        cols = index[mask][:, mesh.dim + 1 :]
        parked = np.sort(cols[cols >= 0])
    return DofMap(index, names, n, constrained, prescribed, parked)


# ---------------------------------------------------------------------------
# state


@dataclass
class FieldState:
    U: np.ndarray
    lam: float = 0.0

    def copy(self) -> "FieldState":
        return FieldState(self.U.copy(), self.lam)


def initial_state(dofmap: DofMap, program: LoadProgram) -> FieldState:
    U = np.zeros(dofmap.n_dofs)
    col = dofmap.column("theta")
    U[dofmap.index[:, col]] = program.theta_initial
    return FieldState(U, 0.0)


def nodal_fields(mesh: Mesh, dofmap: DofMap, U: np.ndarray):
    """Split a global vector into displacement (N, dim), temperature (N,) and p (N, m)."""
    dim = mesh.dim
    vals = np.where(dofmap.index >= 0, U[np.maximum(dofmap.index, 0)], 0.0)
    return vals[:, :dim], vals[:, dim], vals[:, dim + 1 :]


def constrained_values(dofmap: DofMap, program: LoadProgram, lam: float) -> np.ndarray:
    """Values of the constrained DOFs at load factor ``lam``."""
    ids = np.flatnonzero(dofmap.constrained)
    start = np.zeros(ids.size)
    theta_ids = dofmap.index[:, dofmap.column("theta")]
    start[np.isin(ids, theta_ids)] = program.theta_initial
    return start + lam * (dofmap.prescribed[ids] - start)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class AssembledSystem:
    K: sp.csr_matrix
    R: np.ndarray


_FACETS = {
    "T1": ((0, 1), (1, 2), (2, 0)),
    "Q1": ((0, 1), (1, 2), (2, 3), (3, 0)),
    "H1": ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)),
}


def boundary_facets(mesh: Mesh, node_set: np.ndarray) -> list[tuple[int, ...]]:
    """Boundary facets (edges in 2D, faces in 3D) whose nodes all lie in ``node_set``."""
    count: dict[tuple[int, ...], list] = {}
    for el in mesh.elements:
        for f in _FACETS[el.kind]:
            nodes = tuple(el.nodes[i] for i in f)
            key = tuple(sorted(nodes))
            if key in count:
                count[key][1] += 1
            else:
                count[key] = [nodes, 1]
    members = set(np.asarray(node_set).tolist())
    out = [nodes for nodes, c in count.values() if c == 1 and all(n in members for n in nodes)]
    return sorted(out)


def _facet_weights(X: np.ndarray) -> np.ndarray:
    """Integrals of the facet shape functions over one facet."""
    if len(X) == 2:
        return np.full(2, 0.5 * np.linalg.norm(X[1] - X[0]))
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[-g, -g], [g, -g], [g, g], [-g, g]])
    N = shape_values("Q1", pts)
    dN = shape_derivatives("Q1", pts)
    w = np.zeros(4)
    for q in range(4):
        t = X.T @ dN[q]
        w += N[q] * np.linalg.norm(np.cross(t[:, 0], t[:, 1]))
    return w


class Assembler:
    """Global residual and tangent for one mesh, material table and DOF map."""

    def __init__(self, mesh: Mesh, dofmap: DofMap, materials: dict, program: LoadProgram,
                 d: float | None = None, tangent: str = "analytic", threads: int = 1, chunk: int = 2048):
        self.mesh = mesh
        self.dofmap = dofmap
        self.program = program
        self.tangent = tangent
        self.threads = max(1, int(threads))
        self.d = float(d) if d is not None else domain_extent(mesh)
        self.materials = materials
        dim = mesh.dim
        self.blocks = []
        for b in mesh.blocks:
            if b.region not in materials:
                raise ProgramError(f"no material for region {b.region!r}")
            mat = materials[b.region]
            if (b.role == THIRD_MEDIUM) != isinstance(mat, MediumParams):
                raise ProgramError(f"material type of region {b.region!r} does not match its role {b.role!r}")
            ndpn = dofs_per_node(dim, mat)
            idx = dofmap.index[b.conn][:, :, :ndpn]
            if np.any(idx < 0):
                raise ProgramError(f"missing DOFs on region {b.region!r}")
            X = mesh.X[b.conn]
            for s in range(0, len(b.ids), chunk):
                sl = slice(s, s + chunk)
                self.blocks.append(
                    dict(kind=b.kind, material=mat, ndpn=ndpn, region=b.region, ids=b.ids[sl],
                         conn=b.conn[sl], X=X[sl],
                         dofs=idx[sl].reshape(idx[sl].shape[0], -1), shape=batch_shape_eval(b.kind, X[sl]))
                )
        self._pattern()
        self.f_ext = self._external_loads()

    def _pattern(self):
        n = self.dofmap.n_dofs
        rows, cols = [], []
        for blk in self.blocks:
            dofs = blk["dofs"]
            m = dofs.shape[1]
            rows.append(np.repeat(dofs, m, axis=1).ravel())
            cols.append(np.tile(dofs, (1, m)).ravel())
        rows.append(self.dofmap.parked)
        cols.append(self.dofmap.parked)
        keys = np.concatenate(rows) * n + np.concatenate(cols)
        uniq, inv = np.unique(keys, return_inverse=True)
        self._scatter = inv
        self._nnz = uniq.size
        r, c = uniq // n, uniq % n
        self._indices = c.astype(np.int64)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n))]).astype(np.int64)
        self._n_parked = self.dofmap.parked.size

    def _external_loads(self) -> np.ndarray:
        mesh, dm, dim = self.mesh, self.dofmap, self.mesh.dim
        f = np.zeros(dm.n_dofs)
        tcol = dm.column("theta")
        for blk in self.blocks:
            body = self.program.body_forces.get(blk["region"])
            src = self.program.heat_sources.get(blk["region"], 0.0)
            if body is None and not src:
                continue
            wN = blk["shape"].detJ_ref[..., None] * blk["shape"].N  # (E, Q, n)
            nodal = wN.sum(axis=1)
            nodes = blk["conn"]
            if body is not None:
                body = np.asarray(body, dtype=float)
                for a in range(dim):
                    np.add.at(f, dm.index[nodes, a], nodal * body[a])
            if src:
                np.add.at(f, dm.index[nodes, tcol], nodal * src)
        for item in self.program.neumann:
            facets = boundary_facets(mesh, mesh.node_set(item.node_set))
            if not facets:
                raise ProgramError(f"node set {item.node_set!r} spans no boundary facet")
            for nodes in facets:
                w = _facet_weights(mesh.X[list(nodes)])
                if item.kind == "traction":
                    t = np.asarray(item.value, dtype=float)
                    if t.shape != (dim,):
                        raise ProgramError(f"traction needs {dim} components")
                    for a in range(dim):
                        np.add.at(f, dm.index[list(nodes), a], w * t[a])
                elif item.kind == "flux":
                    np.add.at(f, dm.index[list(nodes), tcol], w * float(item.value))
                else:
                    raise ProgramError(f"unknown Neumann kind {item.kind!r}")
        return f

    def _eval_block(self, blk, U, want_k):
        fields = U[blk["dofs"]].reshape(len(blk["ids"]), -1, blk["ndpn"])
        try:
            return block_system(blk["kind"], blk["material"], blk["X"], fields, shape=blk["shape"],
                                d=self.d, tangent=self.tangent, want_k=want_k)
        except ElementInversion as exc:
            eid = int(blk["ids"][exc.element]) if exc.element is not None else None
            raise ElementInversion(f"element {eid}, qp {exc.qp}: {exc}", element=eid, qp=exc.qp) from None

    def internal(self, U: np.ndarray, want_k: bool = True):
        """Internal residual (n_dofs,) and, optionally, the tangent as CSR."""
        if self.threads > 1 and len(self.blocks) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                results = list(ex.map(lambda b: self._eval_block(b, U, want_k), self.blocks))
        else:
            results = [self._eval_block(b, U, want_k) for b in self.blocks]
        n = self.dofmap.n_dofs
        R = np.zeros(n)
        for blk, (r, _) in zip(self.blocks, results):
            R += np.bincount(blk["dofs"].ravel(), weights=r.ravel(), minlength=n)
        R[self.dofmap.parked] = U[self.dofmap.parked]
        if not want_k:
            return R, None
        vals = np.concatenate([k.ravel() for _, k in results] + [np.ones(self._n_parked)])
        data = np.bincount(self._scatter, weights=vals, minlength=self._nnz)
        K = sp.csr_matrix((data, self._indices, self._indptr), shape=(n, n))
        return R, K

    def residual(self, U: np.ndarray, lam: float) -> np.ndarray:
        return self.internal(U, want_k=False)[0] - lam * self.f_ext

    def system(self, U: np.ndarray, lam: float) -> AssembledSystem:
        R, K = self.internal(U)
        return AssembledSystem(K=K, R=R - lam * self.f_ext)

    def reaction(self, U: np.ndarray, lam: float, node_set: str, component: str) -> float:
        """Sum of residual entries (support reactions) over one component of a node set."""
        R = self.residual(U, lam)
        col = self.dofmap.column(_COMPONENT_ALIASES.get(component, component))
        return float(R[self.dofmap.index[self.mesh.node_set(node_set), col]].sum())


def assemble(mesh, dofmap, state, program, materials, d=None, tangent="analytic") -> AssembledSystem:
    """Free-DOF system with constrained columns moved to the right-hand side.

    Returns the tangent restricted to free DOFs and the free residual at
    ``state`` (constrained entries taken from ``state``).
    """
    asm = Assembler(mesh, dofmap, materials, program, d=d, tangent=tangent)
    full = asm.system(state.U, state.lam)
    free = dofmap.free
    return AssembledSystem(K=full.K[free][:, free].tocsr(), R=full.R[free])


# ---------------------------------------------------------------------------
# Newton


@dataclass
class NewtonResult:
    converged: bool
    state: FieldState
    iterations: int
    residual: float
    residual_history: list = field(default_factory=list)
    message: str = ""


def residual_scales(mesh: Mesh, dofmap: DofMap, materials: dict, program: LoadProgram, d: float) -> np.ndarray:
    """Per-DOF reference scales of the residual rows for the absolute tolerance."""
    dim = mesh.dim
    solids = [m for m in materials.values() if isinstance(m, SolidParams)]
    media = [m for m in materials.values() if isinstance(m, MediumParams)]
    if solids:
        K_ref, k_ref = max(m.K for m in solids), max(m.k_theta for m in solids)
    else:
        K_ref, k_ref = max(m.gamma for m in media), max(m.k_cap for m in media)
    dT = [abs(i.value - program.theta_initial) for i in program.dirichlet
          if _COMPONENT_ALIASES.get(i.component.lower()) == "theta"]
    dT_ref = max(dT, default=0.0) or 1.0
    scale = np.ones(dofmap.n_dofs)
    for col, name in enumerate(dofmap.field_names):
        ids = dofmap.index[:, col]
        ids = ids[ids >= 0]
        if name.startswith("u"):
            scale[ids] = K_ref * d ** (dim - 1)
        elif name == "theta":
            scale[ids] = k_ref * dT_ref * d ** (dim - 2)
    return scale


class NewtonSolver:
    """Full-step Newton with direct sparse LU on the free DOFs."""

    def __init__(self, assembler: Assembler, program: LoadProgram, scales: np.ndarray | None = None):
        self.asm = assembler
        self.program = program
        self.controls = program.controls
        dm = assembler.dofmap
        self.free = dm.free
        self.cons = np.flatnonzero(dm.constrained)
        if scales is None:
            scales = residual_scales(assembler.mesh, dm, assembler.materials, program, assembler.d)
        self.scales_free = scales[self.free]

    def _converged(self, Rf, r0):
        small = np.max(np.abs(Rf) / self.scales_free, initial=0.0) < self.controls.tol_abs
        rel = r0 > 0 and np.linalg.norm(Rf) / r0 < self.controls.tol_rel
        return bool(small or rel)

    def _solve(self, K, rhs):
        # symmetric equilibration keeps pivoting (and fill) moderate when the
        # medium rows are many orders of magnitude softer than the solid rows
        amax = abs(K).max(axis=1).toarray().ravel()
        if not np.all(amax > 0):
            raise NewtonFailure("structurally singular tangent")
        dscale = 1.0 / np.sqrt(amax)
        D = sp.diags(dscale)
        try:
            lu = spla.splu((D @ K @ D).tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NewtonFailure(f"factorization failed: {exc}") from None
        x = dscale * lu.solve(dscale * rhs)
        if not np.all(np.isfinite(x)):
            raise NewtonFailure("non-finite Newton update")
        return x

    def solve(self, state: FieldState, lam: float) -> NewtonResult:
        """Advance ``state`` (converged at ``state.lam``) to load factor ``lam``."""
        free, cons = self.free, self.cons
        U = state.U.copy()
        c_new = constrained_values(self.asm.dofmap, self.program, lam)
        dc = c_new - U[cons]
        hist = []
        if free.size == 0:
            U[cons] = c_new
            return NewtonResult(True, FieldState(U, lam), 0, 0.0, [0.0])
        try:
            R, K = self.asm.internal(U)
            R = R - lam * self.asm.f_ext
            Rf = R[free]
            if not np.any(dc):
                r0 = np.linalg.norm(Rf)
                hist.append(float(np.max(np.abs(Rf), initial=0.0)))
                if self._converged(Rf, r0):
                    return NewtonResult(True, FieldState(U, lam), 0, hist[-1], hist)
            else:
                # lifted predictor: prescribed increments enter the right-hand side
                Rf = Rf + K[free][:, cons] @ dc
                r0 = np.linalg.norm(Rf)
            Kff = K[free][:, free]
            U[free] += self._solve(Kff, -Rf)
            U[cons] = c_new
            it = 1
            while True:
                R, K = self.asm.internal(U)
                R = R - lam * self.asm.f_ext
                Rf = R[free]
                if not np.all(np.isfinite(Rf)):
                    raise NewtonFailure("non-finite residual")
                hist.append(float(np.max(np.abs(Rf), initial=0.0)))
                if self._converged(Rf, r0):
                    return NewtonResult(True, FieldState(U, lam), it, hist[-1], hist)
                if it >= self.controls.max_iter:
                    return NewtonResult(False, state, it, hist[-1], hist, "max iterations reached")
                U[free] += self._solve(K[free][:, free], -Rf)
                it += 1
        except (ElementInversion, DegenerateDistortion, NewtonFailure) as exc:
            return NewtonResult(False, state, len(hist), hist[-1] if hist else np.nan, hist, str(exc))


def newton_solve(builder: Callable, state: FieldState, lam: float, controls: StepControls | None = None) -> NewtonResult:
    """Newton iteration for a generic system builder.

    ``builder(U, lam)`` returns (K_ff, R_f, U_update) where ``U_update(U, dx)``
    applies a free-DOF increment; this is the plain algorithm without
    Dirichlet lifting, used for unconstrained subproblems.
    """
    controls = controls or StepControls()
    U = state.U.copy()
    K, R, update = builder(U, lam)
    r0 = np.linalg.norm(R)
    hist = [float(np.max(np.abs(R), initial=0.0))]
    if r0 == 0 or hist[0] < controls.tol_abs:
        return NewtonResult(True, FieldState(U, lam), 0, hist[0], hist)
    for it in range(1, controls.max_iter + 1):
        try:
            dx = spla.splu(sp.csc_matrix(K)).solve(-R)
        except RuntimeError as exc:
            return NewtonResult(False, state, it - 1, hist[-1], hist, str(exc))
        U = update(U, dx)
        K, R, update = builder(U, lam)
        hist.append(float(np.max(np.abs(R), initial=0.0)))
        if hist[-1] < controls.tol_abs or np.linalg.norm(R) / r0 < controls.tol_rel:
            return NewtonResult(True, FieldState(U, lam), it, hist[-1], hist)
    return NewtonResult(False, state, controls.max_iter, hist[-1], hist, "max iterations reached")


# ---------------------------------------------------------------------------
# load stepping


@dataclass(frozen=True)
class StepRecord:
    step: int
    lam: float
    dlam: float
    iterations: int
    residual: float
    gap: float


@dataclass
class SolveHistory:
    records: list = field(default_factory=list)
    total_iterations: int = 0
    failed_attempts: int = 0
    wall_time: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.records)


def adaptive_stepping(solve_step: Callable, state, controls: StepControls, stops=(), measure=None, on_step=None):
    """Advance the load factor from ``state.lam`` to 1.

    ``solve_step(state, lam)`` returns a :class:`NewtonResult`. On failure
    the increment is halved; after a step needing at most ``fast_iter``
    iterations it grows by ``growth`` up to ``dlambda_max``. Steps are
    clipped so that every value in ``stops`` is hit exactly. ``measure``
    maps an accepted state to its gap; ``on_step(record, state)`` runs after
    every accepted step.
    """
    history = SolveHistory()
    lam = state.lam
    dlam = controls.dlambda0
    stops = sorted(s for s in stops if 0.0 < s < 1.0)
    t0 = time.perf_counter()
    while lam < 1.0:
        target = min(lam + dlam, 1.0)
        nxt = [s for s in stops if s > lam]
        if nxt and target > nxt[0]:
            target = nxt[0]
        if 1.0 - target < 1e-12:
            target = 1.0
        step = target - lam
        res = solve_step(state, target)
        if not res.converged:
            history.failed_attempts += 1
            dlam = step / 2.0
            log.info("step rejected at lambda %.6g (%s); dlambda -> %.3g", target, res.message, dlam)
            if dlam < controls.dlambda_min:
                history.wall_time = time.perf_counter() - t0
                raise SolverAbort(f"load increment below minimum at lambda {lam:.6g}: {res.message}",
                                  lam, state, history)
            continue
        state = res.state
        lam = target
        history.total_iterations += res.iterations
        gap = measure(state) if measure else float("nan")
        rec = StepRecord(len(history.records) + 1, lam, step, res.iterations, res.residual, float(gap))
        history.records.append(rec)
        log.info("step %d lambda %.17g dlambda %.17g iters %d resid %.6e gap %.6e",
                 rec.step, rec.lam, rec.dlam, rec.iterations, rec.residual, rec.gap)
        if on_step is not None:
            on_step(rec, state)
        if res.iterations <= controls.fast_iter:
            dlam = min(max(dlam, step) * controls.growth, controls.dlambda_max)
    history.wall_time = time.perf_counter() - t0
    return state, history


def measure_gap(mesh: Mesh, displacement: np.ndarray, lower, upper, axis: int | None = None) -> float:
    """Smallest deformed distance along ``axis`` between opposing node sets.

    Each upper node is paired with the lower node nearest to it in the
    deformed transverse plane; negative distances are clamped to zero.
    """
    lower = mesh.node_set(lower) if isinstance(lower, str) else np.asarray(lower)
    upper = mesh.node_set(upper) if isinstance(upper, str) else np.asarray(upper)
    if lower.size == 0 or upper.size == 0:
        raise ProgramError("gap node sets must be non-empty")
    axis = mesh.dim - 1 if axis is None else axis
    x = mesh.X + displacement
    trans = [a for a in range(mesh.dim) if a != axis]
    tree = cKDTree(x[lower][:, trans])
    _, nearest = tree.query(x[upper][:, trans])
    gaps = x[upper, axis] - x[lower[nearest], axis]
    return float(max(gaps.min(), 0.0))


@dataclass
class Problem:
    """Mesh, material table and load program with the derived solver objects."""

    mesh: Mesh
    materials: dict
    program: LoadProgram
    d: float | None = None
    p_layout: str = "all"
    tangent: str = "analytic"
    threads: int = 1

    def __post_init__(self):
        self.dofmap = build_dof_map(self.mesh, self.program, self.p_layout)
        self.assembler = Assembler(self.mesh, self.dofmap, self.materials, self.program,
                                   d=self.d, tangent=self.tangent, threads=self.threads)
        self.d = self.assembler.d
        self.newton = NewtonSolver(self.assembler, self.program)

    def initial_state(self) -> FieldState:
        return initial_state(self.dofmap, self.program)

    def gap(self, state: FieldState) -> float:
        spec = self.program.gap
        if spec is None:
            if "gap_lower" not in self.mesh.node_sets or "gap_upper" not in self.mesh.node_sets:
                return float("nan")
            spec = ("gap_lower", "gap_upper", self.mesh.dim - 1)
        u = nodal_fields(self.mesh, self.dofmap, state.U)[0]
        return measure_gap(self.mesh, u, spec[0], spec[1], spec[2])


def run_load_program(problem: Problem, state: FieldState | None = None, on_step=None, solve_step=None):
    """Drive the load factor to 1 with adaptive stepping.

    ``on_step(record, state)`` is called after each accepted step.
    ``solve_step`` overrides the Newton solver (used for testing the
    controller).
    """
    state = problem.initial_state() if state is None else state
    return adaptive_stepping(solve_step or problem.newton.solve, state, problem.program.controls,
                             problem.program.stops, measure=problem.gap, on_step=on_step)
