import re

import numpy as np
import pytest

from agfem.aggregation import aggregate_cells, node_to_root
from agfem.fespace import build_constraints, build_space
from agfem.geometry import LevelSetGeometry, builtin_shapes
from agfem.mesh import classify_cells, unit_box_mesh
from agfem.quadrature import build_cut_quadrature

# acceptance results, filled by test_acceptance.py and echoed at the end
ACCEPTANCE = {}


def _criterion_order(key):
    return int(re.match(r"\d+", key).group()), key


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_criterion_order):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")


class Setup:
    """Classified mesh, aggregates, spaces and quadrature for one geometry."""

    def __init__(self, geom, n, q=1, subdiv=None):
        self.geom = geom
        self.q = q
        mesh = classify_cells(unit_box_mesh(geom.dim, n), geom)
        self.amap = aggregate_cells(mesh, geom)
        self.mesh = self.amap.mesh
        self.space = build_space(self.mesh, q, "aggregated")
        self.active = build_space(self.mesh, q, "active")
        self.cons = build_constraints(self.space, None, node_to_root(self.amap, self.mesh, self.space))
        self.quad = build_cut_quadrature(self.mesh, geom, q=q, subdiv=subdiv)


@pytest.fixture(scope="session")
def circle_q1():
    return Setup(builtin_shapes("circle"), 16, q=1)


@pytest.fixture(scope="session")
def circle_q2():
    return Setup(builtin_shapes("circle"), 8, q=2)


def rotated_square(angle=0.3, half=0.3):
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])

    def psi(x):
        return np.max(np.abs((x - 0.5) @ R), axis=-1) - half

    return LevelSetGeometry(psi=psi, dim=2, name="square")


@pytest.fixture(scope="session")
def square_q1():
    # polygonal boundary strictly inside the box
    return Setup(rotated_square(), 8, q=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
