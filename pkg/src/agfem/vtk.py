"""Legacy ASCII VTK output of the cut triangulation."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fespace import evaluate
from .mesh import corner_offsets

# VTK cell type ids
_QUAD, _HEX, _TRIANGLE, _TETRA = 9, 12, 5, 10
# lexicographic corner order -> VTK winding
_QUAD_ORDER = [0, 1, 3, 2]
_HEX_ORDER = [0, 1, 3, 2, 4, 5, 7, 6]


def export_vtk(mesh, geom, quad, u_h, path, space=None, amap=None) -> Path:
    """Write interior cells plus the cut simplices of ``quad``.

    ``u_h`` holds active coefficients of ``space`` (or is a callable of the
    coordinates, or None). Points are not shared between cells. Cell data:
    ``class`` (0 interior, 1 cut) and ``root_id`` (-1 without aggregation).
    """
    d = mesh.dim
    interior = mesh.interior_cells
    nv = 2 ** d
    pts_in = (mesh.cell_origin(interior)[:, None, :]
              + corner_offsets(d)[None] * mesh.h).reshape(-1, d)
    simp = quad.simplices if quad is not None else np.zeros((0, d + 1, d))
    owner = quad.cells[quad.simplex_owner] if quad is not None else np.zeros(0, dtype=np.int64)
    pts_cut = simp.reshape(-1, d)
    pts = np.concatenate([pts_in, pts_cut])
    pt_cells = np.concatenate([np.repeat(interior, nv), np.repeat(owner, d + 1)])

    if u_h is None:
        u = np.zeros(len(pts))
    elif callable(u_h):
        u = np.asarray(u_h(pts), dtype=float)
    else:
        if space is None:
            raise ValueError("coefficient vector given without a space")
        u = evaluate(space, np.asarray(u_h, dtype=float), pt_cells, pts) if len(pts) else np.zeros(0)

    order = _QUAD_ORDER if d == 2 else _HEX_ORDER
    conn_in = np.arange(len(pts_in)).reshape(-1, nv)[:, order]
    conn_cut = len(pts_in) + np.arange(len(pts_cut)).reshape(-1, d + 1)
    cell_ids = np.concatenate([interior, owner])
    cls = np.concatenate([np.zeros(len(interior), dtype=int), np.ones(len(owner), dtype=int)])
    roots = amap.root_of[cell_ids] if amap is not None else np.full(len(cell_ids), -1)

    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nagfem cut triangulation\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        p3 = np.zeros((len(pts), 3))
        p3[:, :d] = pts
        np.savetxt(fh, p3, fmt="%.10g")
        n_cells = len(conn_in) + len(conn_cut)
        size = len(conn_in) * (nv + 1) + len(conn_cut) * (d + 2)
        fh.write(f"CELLS {n_cells} {size}\n")
        if len(conn_in):
            np.savetxt(fh, np.hstack([np.full((len(conn_in), 1), nv), conn_in]), fmt="%d")
        if len(conn_cut):
            np.savetxt(fh, np.hstack([np.full((len(conn_cut), 1), d + 1), conn_cut]), fmt="%d")
        fh.write(f"CELL_TYPES {n_cells}\n")
        types = [_QUAD if d == 2 else _HEX] * len(conn_in) + [_TRIANGLE if d == 2 else _TETRA] * len(conn_cut)
        np.savetxt(fh, np.asarray(types, dtype=int), fmt="%d")
        fh.write(f"CELL_DATA {n_cells}\nSCALARS class int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, cls, fmt="%d")
        fh.write("SCALARS root_id int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, roots, fmt="%d")
        fh.write(f"POINT_DATA {len(pts)}\nSCALARS u double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, u, fmt="%.10g")
    return path
