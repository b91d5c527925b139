import math
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agfem.geometry import LevelSetGeometry, builtin_shapes, halfspace
from agfem.mesh import classify_cells, unit_box_mesh
from agfem.quadrature import (build_cut_quadrature, clip_simplices, cut_rule, default_degree,
                              domain_measures, interior_rule, kuhn_simplices, simplex_measure,
                              simplex_rule, tensor_gauss, write_point_cloud_csv)


def simplex_monomial(powers):
    # int over the unit simplex of prod x_i^a_i = prod a_i! / (d + sum a)!
    d = len(powers)
    return np.prod([factorial(a) for a in powers]) / factorial(d + sum(powers))


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6])
def test_simplex_rule_exactness(dim, degree):
    x, w = simplex_rule(dim, degree)
    assert w.sum() == pytest.approx(1.0 / factorial(dim), rel=1e-14)
    assert np.all(w > 0)
    for powers in np.ndindex(*(degree + 1,) * dim):
        if sum(powers) > degree:
            continue
        approx = np.sum(w * np.prod(x ** np.array(powers), axis=1))
        assert approx == pytest.approx(simplex_monomial(powers), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("dim", [2, 3])
def test_tensor_gauss_exactness(dim):
    x, w = tensor_gauss(dim, 3)
    for powers in np.ndindex(*(6,) * dim):
        exact = np.prod([1.0 / (a + 1) for a in powers])
        assert np.sum(w * np.prod(x ** np.array(powers), axis=1)) == pytest.approx(exact, rel=1e-13)


@pytest.mark.parametrize("dim", [2, 3])
def test_kuhn_simplices_tile_the_cube(dim):
    S = kuhn_simplices(dim)
    assert len(S) == factorial(dim)
    corners = np.array([[(c >> a) & 1 for a in range(dim)] for c in range(2 ** dim)], float)
    assert simplex_measure(corners[S]).sum() == pytest.approx(1.0)


def test_default_degree():
    assert default_degree(1, 2) == 3 and default_degree(2, 2) == 5 and default_degree(1, 3) == 4


def test_clip_halfspace_triangle():
    # unit triangle clipped by x < 0.5: trapezoid area 0.375, facet length 0.5
    V = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    psi = lambda x: x[:, 0] - 0.5
    bulk, _, facets, normals, _ = clip_simplices(psi, V, psi(V[0])[None])
    assert simplex_measure(bulk).sum() == pytest.approx(0.375)
    assert simplex_measure(facets).sum() == pytest.approx(0.5)
    assert np.allclose(normals, [[1.0, 0.0]])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: min(abs(a) for a in v) > 1e-3))
def test_clip_tetra_partition(c):
    # inside and outside pieces of a linear level set add up to the tetrahedron
    V = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]])
    coef = np.array(c[:3])
    psi_in = lambda x: x @ coef + c[3]
    psi_out = lambda x: -(x @ coef + c[3])
    b1, *_ = clip_simplices(psi_in, V, psi_in(V[0])[None])
    b2, *_ = clip_simplices(psi_out, V, psi_out(V[0])[None])
    total = simplex_measure(b1).sum() + simplex_measure(b2).sum()
    assert total == pytest.approx(1.0 / 6.0, rel=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_tilted_plane_measures_exact(dim):
    # a linear level set is reproduced exactly by the piecewise-linear interface
    n = np.array([1.0, 0.3, -0.2][:dim])
    g = halfspace(n, 0.45, dim)
    mesh = classify_cells(unit_box_mesh(dim, 5), g)
    vol, surf = domain_measures(mesh, g, q=1, r=0)
    rng = np.random.default_rng(3)
    x = rng.random((400_000, dim))
    assert vol == pytest.approx(np.mean(g.psi(x) < 0), abs=3e-3)
    if dim == 2:
        # chord from y = 0 to y = 1 of the line x + 0.3 y = 0.45
        assert surf == pytest.approx(math.hypot(0.3, 1.0), rel=1e-12)


@pytest.mark.parametrize("r", [0, 1, 2])
def test_divergence_identity(r):
    # int_Omega div(x) = int_Gamma x.n holds exactly on the discrete domain
    g = builtin_shapes("circle", radius=0.3)
    mesh = classify_cells(unit_box_mesh(2, 8), g)
    quad = build_cut_quadrature(mesh, g, q=1, subdiv=r)
    vol, _ = domain_measures(mesh, g, quad=quad)
    flux = np.sum(quad.surface_weights * np.sum(quad.surface_points * quad.surface_normals, axis=1))
    assert 2.0 * vol == pytest.approx(flux, rel=1e-12)
    assert np.allclose(quad.surface_weights @ quad.surface_normals, 0.0, atol=1e-13)


def test_normals_point_outward():
    g = builtin_shapes("sphere", radius=0.3)
    mesh = classify_cells(unit_box_mesh(3, 6), g)
    quad = build_cut_quadrature(mesh, g, q=1, subdiv=1)
    radial = quad.surface_points - 0.5
    radial /= np.linalg.norm(radial, axis=1)[:, None]
    assert np.allclose(np.linalg.norm(quad.surface_normals, axis=1), 1.0)
    assert np.min(np.sum(radial * quad.surface_normals, axis=1)) > 0.8


def test_circle_measures_converge_with_subdivision():
    r = 0.25
    g = builtin_shapes("circle", radius=r)
    mesh = classify_cells(unit_box_mesh(2, 32), g)
    errs = []
    for depth in (0, 1, 2):
        vol, surf = domain_measures(mesh, g, r=depth)
        errs.append(abs(vol - math.pi * r * r) / (math.pi * r * r))
    # polygonal interface: the deficit drops roughly 4x per subdivision level
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[2] > 10


def test_sphere_volume_coarse():
    g = builtin_shapes("sphere", radius=0.25)
    mesh = classify_cells(unit_box_mesh(3, 16), g)
    vol, _ = domain_measures(mesh, g, r=1)
    exact = 4.0 / 3.0 * math.pi * 0.25 ** 3
    assert abs(vol - exact) / exact < 1e-2


def test_cell_offsets_and_rules():
    g = builtin_shapes("circle")
    mesh = classify_cells(unit_box_mesh(2, 8), g)
    quad = build_cut_quadrature(mesh, g, q=2)
    assert quad.subdivision_depth == 2 and quad.degree == default_degree(2, 2)
    vols = quad.cell_volumes()
    assert np.all(vols > 0) and np.all(vols <= mesh.cell_volume * (1 + 1e-12))
    c = mesh.cut_cells[3]
    rule = cut_rule(mesh, g, c, q=2)
    assert rule.bulk_weights.sum() == pytest.approx(quad.cell_volume(c), rel=1e-13)
    assert np.all(quad.cells[quad.bulk_owner] == np.repeat(quad.cells, np.diff(quad.bulk_offsets)))
    with pytest.raises(ValueError):
        cut_rule(mesh, g, 0)


def test_interior_rule():
    mesh = classify_cells(unit_box_mesh(2, 4), builtin_shapes("circle"))
    rule = interior_rule(mesh, mesh.interior_cells[0], q=2)
    assert rule.bulk_weights.sum() == pytest.approx(mesh.cell_volume)
    assert len(rule.bulk_weights) == 9


def test_no_cut_cells():
    g = LevelSetGeometry(psi=lambda x: -np.ones(x.shape[:-1]), dim=2)
    mesh = classify_cells(unit_box_mesh(2, 2), g)
    quad = build_cut_quadrature(mesh, g)
    assert len(quad.cells) == 0 and quad.bulk_weights.size == 0


def test_point_cloud_csv(tmp_path):
    g = builtin_shapes("circle")
    mesh = classify_cells(unit_box_mesh(2, 4), g)
    quad = build_cut_quadrature(mesh, g)
    path = tmp_path / "pts.csv"
    write_point_cloud_csv(quad, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("kind,cell,x,y,weight")
    assert len(lines) == 1 + len(quad.bulk_weights) + len(quad.surface_weights)
