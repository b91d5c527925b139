import numpy as np
import pytest

from agfem.aggregation import (aggregate_cells, max_aggregate_size, node_to_root,
                               write_aggregate_csv)
from agfem.fespace import build_space
from agfem.geometry import LevelSetGeometry, builtin_shapes, halfspace
from agfem.mesh import CUT, EXTERIOR, INTERIOR, build_mesh, classify_cells, facet_neighbors, unit_box_mesh


def strip():
    g = LevelSetGeometry(psi=lambda x: x[..., 1] + 0.5 * x[..., 0] - 2.0, dim=2)
    mesh = classify_cells(build_mesh(([0.0, 0.0], [3.0, 1.0]), (3, 1)), g)
    return g, mesh


def test_strip_by_hand():
    g, mesh = strip()
    assert list(mesh.cell_class) == [INTERIOR, CUT, CUT]
    amap = aggregate_cells(mesh, g)
    assert list(amap.root_of) == [0, 0, 0]
    assert amap.iterations_used == 2
    assert list(amap.sizes()) == [3, 3, 3]
    assert max_aggregate_size(amap) == pytest.approx(np.hypot(3.0, 1.0))
    assert max_aggregate_size(amap, measure="extent") == pytest.approx(3.0)


def test_all_interior_singletons():
    g = LevelSetGeometry(psi=lambda x: -np.ones(x.shape[:-1]), dim=2)
    mesh = classify_cells(unit_box_mesh(2, 4), g)
    amap = aggregate_cells(mesh)
    assert amap.iterations_used == 0
    assert np.array_equal(amap.root_of, np.arange(16))
    assert max_aggregate_size(amap) == pytest.approx(np.sqrt(2) * 0.25)
    with pytest.raises(ValueError):
        max_aggregate_size(amap, measure="volume")


@pytest.mark.parametrize("shape,n", [("circle", 8), ("circle", 32), ("sphere", 8), ("popcorn", 16)])
def test_aggregates_are_valid(shape, n):
    g = builtin_shapes(shape)
    mesh = classify_cells(unit_box_mesh(g.dim, n), g)
    amap = aggregate_cells(mesh, g)
    m = amap.mesh
    act = m.active_cells
    assert np.all(amap.root_of[act] >= 0)
    assert np.all(amap.root_of[m.cell_class == EXTERIOR] == -1)
    roots = amap.roots
    assert np.all(m.cell_class[roots] == INTERIOR)
    assert np.all(amap.root_of[roots] == roots)
    # one interior cell per aggregate
    assert np.all(m.cell_class[act][m.cell_class[act] == INTERIOR] == INTERIOR)
    assert len(roots) == m.interior_cells.size
    # every cut cell reaches its root through member cells sharing cut facets
    for r in roots[:: max(1, len(roots) // 40)]:
        members = set(amap.members_of(r).tolist())
        seen, stack = {int(r)}, [int(r)]
        while stack:
            c = stack.pop()
            for nb, _ in facet_neighbors(m, c):
                if nb in members and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        assert seen == members


def test_aggregate_span_bound_on_benchmarks():
    for n in (8, 16, 32, 64):
        g = builtin_shapes("circle")
        amap = aggregate_cells(classify_cells(unit_box_mesh(2, n), g), g)
        assert max_aggregate_size(amap, measure="extent") <= 5 * amap.mesh.h_max + 1e-12
        assert amap.iterations_used <= 2


def test_deterministic_and_symmetric():
    g = builtin_shapes("circle")
    mesh = classify_cells(unit_box_mesh(2, 16), g)
    a1 = aggregate_cells(mesh, g)
    a2 = aggregate_cells(mesh, g)
    assert np.array_equal(a1.root_of, a2.root_of)


def test_unreachable_cut_cell_is_discarded():
    # a sliver domain that only touches the mesh through cells without interior neighbours
    def psi(x):
        return np.minimum(np.max(np.abs(x - 0.3), axis=-1) - 0.21,
                          np.linalg.norm(x - np.array([0.9, 0.9]), axis=-1) - 0.05)
    g = LevelSetGeometry(psi=psi, dim=2)
    mesh = classify_cells(unit_box_mesh(2, 8), g)
    amap = aggregate_cells(mesh, g)
    assert amap.discarded_cells.size > 0
    assert np.all(amap.mesh.cell_class[amap.discarded_cells] == EXTERIOR)
    assert np.all(amap.root_of[amap.discarded_cells] == -1)


def test_eta0_seeding_keeps_interior_roots():
    g = builtin_shapes("circle")
    mesh = classify_cells(unit_box_mesh(2, 16), g)
    amap = aggregate_cells(mesh, g, eta0=0.5)
    assert np.all(amap.mesh.cell_class[amap.roots] == INTERIOR)
    assert np.all(amap.root_of[amap.mesh.active_cells] >= 0)
    with pytest.raises(ValueError):
        aggregate_cells(mesh, g, eta0=0.0)


def test_node_to_root_prefers_smallest_aggregate(circle_q1):
    s = circle_q1
    roots = node_to_root(s.amap, s.mesh, s.space)
    assert len(roots) == s.space.n_out
    assert np.all(s.mesh.cell_class[roots] == INTERIOR)
    sizes = s.amap.sizes()
    # oracle: brute-force scan of the cells containing each outer node
    coords = s.space.dof_coords(s.space.outer_dofs)
    for b, x in enumerate(coords[::7]):
        lo = np.floor(x / s.mesh.h - 1e-9).astype(int)
        hi = np.floor(x / s.mesh.h + 1e-9).astype(int)
        cells = [int(s.mesh.cell_id(np.array([i, j])))
                 for i in range(lo[0], hi[0] + 1) for j in range(lo[1], hi[1] + 1)
                 if 0 <= i < 16 and 0 <= j < 16]
        cells = [c for c in cells if s.amap.root_of[c] >= 0]
        best = min(cells, key=lambda c: (sizes[c], s.amap.root_of[c]))
        assert roots[b * 7] == s.amap.root_of[best]


def test_node_in_single_cut_cell():
    g = halfspace([1.0, 0.0], 0.6, 2)
    mesh = classify_cells(unit_box_mesh(2, 2), g)
    amap = aggregate_cells(mesh, g)
    space = build_space(amap.mesh, 2, "aggregated")
    roots = node_to_root(amap, amap.mesh, space)
    assert set(roots.tolist()) <= set(amap.roots.tolist())


def test_write_csv(tmp_path, circle_q1):
    path = tmp_path / "agg.csv"
    write_aggregate_csv(circle_q1.amap, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "cell_id,root_id"
    assert len(lines) == 1 + circle_q1.mesh.active_cells.size
