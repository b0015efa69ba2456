"""VTK legacy ASCII writers for 3D unstructured grids and 1D polylines."""

import numpy as np

from vasoperf.mesh import HEX8, TissueMesh

_CELL_TYPE = {HEX8: 12, "tet4": 10}


def write_vtk_mesh(mesh: TissueMesh, path: str, point_data: dict = None,
                   cell_data: dict = None, title: str = "tissue mesh") -> None:
    """Unstructured-grid file with optional POINT_DATA / CELL_DATA scalars."""
    nn = mesh.basis.n_nodes
    with open(path, "w", encoding="utf-8") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.nodes:
            f.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
        f.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nn + 1)}\n")
        for row in mesh.conn:
            f.write(str(nn) + " " + " ".join(str(int(v)) for v in row) + "\n")
        f.write(f"CELL_TYPES {mesh.n_elements}\n")
        ct = _CELL_TYPE[mesh.kind]
        for _ in range(mesh.n_elements):
            f.write(f"{ct}\n")
        if cell_data:
            f.write(f"CELL_DATA {mesh.n_elements}\n")
            for name, values in cell_data.items():
                _write_scalars(f, name, values)
        if point_data:
            f.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, values in point_data.items():
                _write_scalars(f, name, values)


def write_vtk_polylines(positions, connectivity, path: str,
                        point_data: dict = None, title: str = "vessel network") -> None:
    """Polyline file for a 1D network: one two-point line per segment."""
    positions = np.asarray(positions, dtype=float)
    connectivity = np.asarray(connectivity, dtype=int)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\nASCII\nDATASET POLYDATA\n")
        f.write(f"POINTS {len(positions)} double\n")
        for p in positions:
            f.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
        f.write(f"LINES {len(connectivity)} {3 * len(connectivity)}\n")
        for a, b in connectivity:
            f.write(f"2 {a} {b}\n")
        if point_data:
            f.write(f"POINT_DATA {len(positions)}\n")
            for name, values in point_data.items():
                _write_scalars(f, name, values)


def _write_scalars(f, name: str, values) -> None:
    values = np.asarray(values, dtype=float)
    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
    for v in values:
        f.write(f"{float(v)!r}\n")
