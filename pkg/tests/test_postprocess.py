import csv
import math

import numpy as np
import pytest

from conftest import SOLID, small_block
from thirdmedium.material import SolidParams, solid_stress
from thirdmedium.kinematics import kinematic_state
from thirdmedium.mesh import generate_preset_mesh, load_mesh
from thirdmedium.postprocess import (NodalState, derive_fields, export_history, export_vtk, extract_profile,
                                     load_state, save_state, vtk_text)
from thirdmedium.solver import FieldState, Problem, SolveHistory, StepRecord, build_dof_map, LoadProgram, \
    run_load_program

CUBE = "dim 3\n" + "".join(
    f"node {i} {x} {y} {z}\n" for i, (x, y, z) in enumerate(
        [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)])
) + "region body solid\nelement 0 H1 body 0 1 2 3 4 5 6 7\n"

SQUARE = "dim 2\nnode 0 0 0\nnode 1 1 0\nnode 2 1 1\nnode 3 0 1\nregion body solid\nelement 0 Q1 body 0 1 2 3\n"


def _nodal(mesh, u=None, theta=None):
    u = np.zeros_like(mesh.X) if u is None else u
    theta = np.full(mesh.n_nodes, 20.0) if theta is None else theta
    return NodalState(u, theta, np.zeros((mesh.n_nodes, 0)))


def test_reference_state_has_no_stress_or_flux():
    mesh = load_mesh(CUBE)
    d = derive_fields(mesh, _nodal(mesh), {"body": SOLID})
    assert np.all(d.qp[0]["sigma"] == 0.0) and np.all(d.qp[0]["q"] == 0.0)


def test_uniform_dilation_stress():
    mesh = load_mesh(CUBE)
    s = 0.9
    J = s**3
    d = derive_fields(mesh, _nodal(mesh, u=(s - 1.0) * mesh.X), {"body": SOLID})
    expected = SOLID.K * math.log(J) / J
    np.testing.assert_allclose(d.qp[0]["sigma"], np.broadcast_to(expected * np.eye(3), (1, 8, 3, 3)), atol=1e-13)


def test_spatial_fourier_law():
    mesh = load_mesh(SQUARE)
    mat = SolidParams(K=20.0, mu=10.0, k_theta=2.0)
    d = derive_fields(mesh, _nodal(mesh, theta=mesh.X[:, 1].copy()), {"body": mat})
    np.testing.assert_allclose(d.qp[0]["q"][..., :2], np.broadcast_to([0.0, -2.0], (1, 4, 2)), atol=1e-14)


def test_sigma_equals_push_forward_of_S():
    mesh = load_mesh(CUBE)
    rng = np.random.default_rng(0)
    u = 0.05 * rng.standard_normal(mesh.X.shape)
    theta = 20.0 + rng.standard_normal(mesh.n_nodes)
    d = derive_fields(mesh, _nodal(mesh, u=u, theta=theta), {"body": SOLID})
    from thirdmedium.shapes import batch_shape_eval

    sh = batch_shape_eval("H1", mesh.X[None])
    for q in range(8):
        F = np.eye(3) + u.T @ sh.gradN_ref[0, q]
        kin = kinematic_state(F)
        S = solid_stress(kin, sh.N[q] @ theta, SOLID).S
        np.testing.assert_allclose(d.qp[0]["sigma"][0, q], F @ S @ F.T / kin.J, rtol=1e-12, atol=1e-12)


def test_nodal_average_of_constant_field():
    mesh = generate_preset_mesh("block2d", {"nx": 3, "ny_solid": 2, "ny_medium": 2})
    G = np.array([[0.02, 0.01], [0.0, -0.03]])
    d = derive_fields(mesh, _nodal(mesh, u=mesh.X @ G.T), {"solid": SOLID, "medium": _medium()})
    sig = d.qp[[k for k, v in d.qp.items() if v["region"] == "solid"][0]]["sigma"][0, 0]
    solid_nodes = d.nodal["solid"]["touched"]
    np.testing.assert_allclose(d.nodal["solid"]["sigma"][solid_nodes], np.broadcast_to(sig, (solid_nodes.sum(), 3, 3)),
                               rtol=1e-12, atol=1e-14)
    assert not np.isnan(d.display["sigma"]).any()


def _medium():
    from conftest import MEDIUM

    return MEDIUM


def test_profile_uniform_and_missing():
    mesh = load_mesh(SQUARE)
    prof = extract_profile(mesh, _nodal(mesh, theta=np.full(4, 42.0)), [0.5, 0.0], [0.5, 1.5], 7)
    inside = np.setdiff1d(np.arange(7), prof.missing)
    np.testing.assert_array_equal(prof.values[inside], 42.0)
    assert prof.missing.tolist() == [5, 6]
    assert np.isnan(prof.values[prof.missing]).all()


def test_profile_linear_field_interpolated_exactly():
    mesh = load_mesh(SQUARE)
    prof = extract_profile(mesh, _nodal(mesh, theta=3.0 * mesh.X[:, 1] + 1.0), [0.2, 0.0], [0.2, 1.0], 11)
    np.testing.assert_allclose(prof.values, 1.0 + 3.0 * np.linspace(0, 1, 11), atol=1e-12)


def _vtk_sections(text):
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    i = 4
    n_pts = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n_pts)])
    i += 1 + n_pts
    tag, n_cells, size = lines[i].split()
    assert tag == "CELLS"
    cells = [list(map(int, lines[i + 1 + k].split())) for k in range(int(n_cells))]
    assert sum(len(c) for c in cells) == int(size)
    assert all(c[0] == len(c) - 1 and max(c[1:]) < n_pts for c in cells)
    i += 1 + int(n_cells)
    assert lines[i] == f"CELL_TYPES {n_cells}"
    types = [int(v) for v in lines[i + 1: i + 1 + int(n_cells)]]
    return pts, cells, types


def test_vtk_single_element_grammar():
    mesh = load_mesh(CUBE)
    text = vtk_text(mesh, _nodal(mesh), derive_fields(mesh, _nodal(mesh), {"body": SOLID}))
    pts, cells, types = _vtk_sections(text)
    assert pts.shape == (8, 3) and cells == [[8, 0, 1, 2, 3, 4, 5, 6, 7]] and types == [12]
    for key in ("POINT_DATA 8", "VECTORS displacement double", "SCALARS temperature double 1",
                "TENSORS sigma double", "SCALARS pressure double 1", "VECTORS heat_flux double"):
        assert key in text


def test_vtk_omit_medium_and_determinism(tmp_path):
    mesh = generate_preset_mesh("block2d")
    prog = LoadProgram()
    dm = build_dof_map(mesh, prog)
    state = FieldState(np.zeros(dm.n_dofs))
    a = export_vtk(mesh, state, None, tmp_path / "a.vtk", omit_medium=True, dofmap=dm)
    b = export_vtk(mesh, state, None, tmp_path / "b.vtk", omit_medium=True, dofmap=dm)
    _, cells, types = _vtk_sections(a.read_text())
    assert len(cells) == 1024 and set(types) == {9}
    assert a.read_bytes() == b.read_bytes()
    assert "SCALARS p1 double 1" in a.read_text()


def test_history_csv(tmp_path):
    h = SolveHistory(records=[StepRecord(1, 1.0, 1.0, 2, 1e-12, 0.25)])
    path = export_history(h, tmp_path / "h.csv")
    text = path.read_text().splitlines()
    assert len(text) == 2 and text[0] == "step,lambda,dlambda,iterations,residual,gap"
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [float(v) for v in rows[0].values()] == [1.0, 1.0, 1.0, 2.0, 1e-12, 0.25]
    with pytest.raises(ValueError):
        export_history(SolveHistory(), tmp_path / "empty.csv")


@pytest.fixture(scope="module")
def small_run():
    cfg = small_block("load.dirichlet.4.value=-0.1")
    prob = Problem(cfg.mesh, cfg.materials, cfg.program)
    state, hist = run_load_program(prob)
    return cfg, prob, state, hist


def test_history_gap_decreases(small_run, tmp_path):
    *_, hist = small_run
    path = export_history(hist, tmp_path / "h.csv")
    with path.open() as fh:
        gaps = [float(r["gap"]) for r in csv.DictReader(fh)]
    assert np.all(np.diff(gaps) < 0)


def test_discrete_heat_balance(small_run):
    cfg, prob, state, _ = small_run
    top = prob.assembler.reaction(state.U, 1.0, "top", "theta")
    bottom = prob.assembler.reaction(state.U, 1.0, "bottom", "theta")
    assert top > 0
    assert abs(top + bottom) <= 1e-8 * abs(top)


def test_state_round_trip(small_run, tmp_path):
    cfg, prob, state, _ = small_run
    path = save_state(tmp_path / "s.npz", state, prob.dofmap, config="a: 1")
    back, index, meta = load_state(path)
    np.testing.assert_array_equal(back.U, state.U)
    assert back.lam == state.lam
    np.testing.assert_array_equal(index, prob.dofmap.index)
    assert str(meta["config"]) == "a: 1"
