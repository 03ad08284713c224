"""Legacy ASCII VTK output for quadratic triangle meshes."""

import numpy as np

QUADRATIC_TRIANGLE = 22


def write_vtk(path, mesh, cell_data=None, point_data=None, title="invisible_eit"):
    """Write ``mesh`` as an unstructured grid of 6-node triangles.

    ``cell_data`` and ``point_data`` map names to per-element and per-node
    scalar arrays.  Element tags are always written as the cell field ``tag``.
    """
    cells = {"tag": np.asarray(mesh.element_tags, dtype=int)}
    cells.update(cell_data or {})
    E, n = mesh.n_elements, mesh.n_nodes
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {E} {7 * E}")
    lines += ["6 " + " ".join(map(str, t)) for t in mesh.triangles]
    lines.append(f"CELL_TYPES {E}")
    lines += [str(QUADRATIC_TRIANGLE)] * E
    lines.append(f"CELL_DATA {E}")
    lines += _scalars(cells, E)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        lines += _scalars(point_data, n)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _scalars(fields, size):
    out = []
    for name, values in fields.items():
        v = np.asarray(values)
        if v.shape != (size,):
            raise ValueError(f"field {name!r} has shape {v.shape}, expected ({size},)")
        kind = "int" if np.issubdtype(v.dtype, np.integer) else "double"
        out += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
        out += [str(int(x)) for x in v] if kind == "int" else [f"{x:.17g}" for x in v]
    return out


def read_vtk_cell_field(path, name):
    """Read one scalar cell field back from a file written by :func:`write_vtk`."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    in_cells, count = False, 0
    for i, line in enumerate(lines):
        if line.startswith("CELL_DATA"):
            in_cells, count = True, int(line.split()[1])
        elif line.startswith("POINT_DATA"):
            in_cells = False
        elif in_cells and line.startswith("SCALARS") and line.split()[1] == name:
            return np.array([float(x) for x in lines[i + 2:i + 2 + count]])
    raise KeyError(name)
