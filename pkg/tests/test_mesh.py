import numpy as np
import pytest

from thirdmedium.mesh import (MeshError, THIRD_MEDIUM, domain_extent, dump_mesh, generate_preset_mesh,
                              load_mesh)
from thirdmedium.shapes import reference_jacobians

MINIMAL = """\
dim 2
node 0 0 0
node 1 1 0
node 2 0 1
region body solid
element 0 T1 body 0 1 2
nodeset base 0 1
"""


def test_block2d_counts_and_regions():
    mesh = generate_preset_mesh("block2d")
    assert mesh.n_elements == 1280
    assert mesh.count_by_role() == {"solid": 1024, THIRD_MEDIUM: 256}
    ymax = mesh.X[:, 1].max()
    assert ymax == pytest.approx(2.25)
    assert mesh.X[:, 0].max() == pytest.approx(1.0)


def test_block2d_extent():
    assert domain_extent(generate_preset_mesh("block2d")) == pytest.approx(2.25)


def test_two_blocks_element_count():
    mesh = generate_preset_mesh("two_blocks2d")
    assert mesh.n_elements == 9216


def test_two_blocks_triangles_split_each_quad():
    q = generate_preset_mesh("two_blocks2d", {"nx": 4, "ny_lower": 2, "ny_medium": 1, "ny_upper": 2})
    t = generate_preset_mesh("two_blocks2d", {"nx": 4, "ny_lower": 2, "ny_medium": 1, "ny_upper": 2,
                                               "element": "T1"})
    assert t.n_elements == 2 * q.n_elements
    assert t.n_nodes == q.n_nodes


@pytest.mark.parametrize("layers, expected", [(1, 576), (2, 640), (4, 768)])
def test_block_plate_element_counts(layers, expected):
    assert generate_preset_mesh("block_plate3d", {"layers": layers}).n_elements == expected


def test_block_plate_fine_count():
    mesh = generate_preset_mesh("block_plate3d", {"n_inplane": 16, "layers": 4, "layers_lower": 8,
                                                   "layers_upper": 8})
    assert mesh.n_elements == 5120


def test_block_plate_full_extent():
    mesh = generate_preset_mesh("block_plate3d", {"quarter": False})
    assert domain_extent(mesh) == pytest.approx(8.0)
    assert mesh.X[:, 2].max() == pytest.approx(3.5)


def test_single_node_extent_is_zero():
    mesh = load_mesh("dim 2\nnode 0 0.5 0.5\n")
    assert domain_extent(mesh) == 0.0


def test_load_minimal():
    mesh = load_mesh(MINIMAL)
    assert mesh.n_elements == 1 and mesh.n_nodes == 3
    assert mesh.node_sets["base"].tolist() == [0, 1]


def test_undefined_node_reported():
    text = MINIMAL.replace("element 0 T1 body 0 1 2", "element 0 T1 body 0 1 99")
    with pytest.raises(MeshError, match="line 6.*undefined node"):
        load_mesh(text)


@pytest.mark.parametrize(
    "bad, pattern",
    [
        ("node 0 0 0\n", "line 1"),
        ("dim 2\nnode 0 0 x\n", "line 2: malformed"),
        ("dim 2\nbanana 1\n", "line 2: unknown keyword"),
        ("dim 2\nregion a gel\n", "line 2: unknown role"),
    ],
)
def test_malformed_lines(bad, pattern):
    with pytest.raises(MeshError, match=pattern):
        load_mesh(bad)


def test_negative_jacobian_names_element():
    text = MINIMAL.replace("element 0 T1 body 0 1 2", "element 0 T1 body 0 2 1")
    with pytest.raises(MeshError, match="element 0: non-positive"):
        load_mesh(text)


@pytest.mark.parametrize("preset", ["block2d", "wavy_interface2d", "block_plate3d"])
def test_round_trip(preset):
    mesh = generate_preset_mesh(preset)
    again = load_mesh(dump_mesh(mesh))
    assert again.n_nodes == mesh.n_nodes
    np.testing.assert_array_equal(again.X, mesh.X)
    assert [e.nodes for e in again.elements] == [e.nodes for e in mesh.elements]
    assert [e.region for e in again.elements] == [e.region for e in mesh.elements]
    assert {k: r.role for k, r in again.regions.items()} == {k: r.role for k, r in mesh.regions.items()}
    for name, ids in mesh.node_sets.items():
        np.testing.assert_array_equal(again.node_sets[name], ids)


@pytest.mark.parametrize("preset", ["block2d", "two_blocks2d", "wavy_interface2d", "block_plate3d"])
def test_positive_jacobians(preset):
    mesh = generate_preset_mesh(preset)
    for b in mesh.blocks:
        assert np.all(reference_jacobians(b.kind, mesh.X[b.conn]) > 0)


@pytest.mark.parametrize("preset", ["block2d", "two_blocks2d", "block_plate3d"])
def test_gap_sets_oppose(preset):
    mesh = generate_preset_mesh(preset)
    lo, up = mesh.node_sets["gap_lower"], mesh.node_sets["gap_upper"]
    axis = mesh.dim - 1
    a = mesh.X[lo]
    b = mesh.X[up]
    key = lambda x: np.lexsort(np.delete(x, axis, axis=1).T)  # noqa: E731
    np.testing.assert_allclose(np.delete(a[key(a)], axis, axis=1), np.delete(b[key(b)], axis, axis=1))
    assert np.all(b[:, axis].min() > a[:, axis].max())


def test_probe_sets_are_single_opposing_nodes():
    mesh = generate_preset_mesh("block2d")
    lo, up = mesh.node_sets["probe_lower"], mesh.node_sets["probe_upper"]
    assert lo.size == up.size == 1
    assert mesh.X[lo[0], 0] == pytest.approx(0.5) == mesh.X[up[0], 0]


def test_preset_errors():
    with pytest.raises(MeshError, match="unknown preset"):
        generate_preset_mesh("discs")
    with pytest.raises(MeshError, match="resolution"):
        generate_preset_mesh("block2d", {"nx": 0})
    with pytest.raises(MeshError, match="amplitude"):
        generate_preset_mesh("wavy_interface2d", {"amplitude": None})
