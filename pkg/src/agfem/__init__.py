"""Aggregated unfitted finite elements on Cartesian background meshes."""

from .geometry import LevelSetGeometry, ManufacturedSolution, builtin_shapes, manufactured
from .mesh import BackgroundMesh, classify_cells, unit_box_mesh
from .aggregation import AggregateMap, aggregate_cells, node_to_root
from .fespace import ConstraintSet, FESpace, build_constraints, build_space
from .quadrature import QuadratureSet, build_cut_quadrature
from .assembly import NitscheParams, SparseSystem, assemble_mass, assemble_stiffness
from .spectral import cond_estimate, solve_cg, solve_direct
from .error_norms import ErrorReport, compute_errors

__version__ = "0.1.0"
