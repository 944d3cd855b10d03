"""Nodal discontinuous Galerkin toolkit with closed, open and half-closed node families."""

from .errors import HCDGError
from .layout import Discretization, build_layouts, discretize, physical_node_coords
from .mesh import (Mesh, bundled_mesh, cartesian_quad_mesh, load_mesh, read_mesh, refine_uniform,
                   uniform_interval_mesh)
from .operators import (FluxKind, FluxSpec, QuadratureMode, SparseOperator, assemble_divergence,
                        assemble_face_mass, assemble_gradient, assemble_ldg_laplacian, assemble_mass,
                        pattern_report, spectral_equivalence_check)
from .quadrature import Basis1D, Kind, NodeFamily, Side, legendre_eval, make_basis
from .solvers import (CondensedSystem, Partition, PreconditionerKind, build_partition, build_preconditioner,
                      condense, iteration_spectrum, recover_dependent, stationary_iterate)
from .switch import SwitchFunction, assign_switch_quad, dependent_nodes_ratio, refine_switch, validate_switch

__version__ = "0.1.0"
