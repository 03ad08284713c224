import numpy as np
import pytest

from invisible_eit.mesh import OmegaSpec, build_disk_mesh
from invisible_eit.vtk import QUADRATIC_TRIANGLE, read_vtk_cell_field, write_vtk


@pytest.fixture(scope="module")
def mesh():
    return build_disk_mesh(OmegaSpec.concentric_disk(0.5), 0.2)


def test_round_trip(mesh, tmp_path, rng):
    field = rng.standard_normal(mesh.n_elements)
    path = tmp_path / "m.vtk"
    write_vtk(path, mesh, {"sigma": field}, {"u": np.arange(mesh.n_nodes, dtype=float)})
    assert np.array_equal(read_vtk_cell_field(path, "sigma"), field)
    np.testing.assert_array_equal(read_vtk_cell_field(path, "tag"), mesh.element_tags)
    with pytest.raises(KeyError):
        read_vtk_cell_field(path, "u")


def test_header_and_cell_types(mesh, tmp_path):
    path = tmp_path / "m.vtk"
    write_vtk(path, mesh)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile") and lines[2] == "ASCII"
    i = lines.index(f"CELL_TYPES {mesh.n_elements}")
    assert set(lines[i + 1:i + 1 + mesh.n_elements]) == {str(QUADRATIC_TRIANGLE)}
    assert f"POINTS {mesh.n_nodes} double" in lines
    assert "SCALARS tag int 1" in lines


def test_wrong_shape_rejected(mesh, tmp_path):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "m.vtk", mesh, {"bad": np.zeros(3)})
