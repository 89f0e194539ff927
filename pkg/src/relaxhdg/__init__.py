"""High-order relaxed H(div) hybrid DG discretization of Stokes and
Navier-Stokes flow on triangle meshes."""

from .analysis import (check_reconstruction, compute_errors, convergence_table, drag_lift,
                       estimate_infsup, solution_errors)
from .assembly import (DEFAULT_LAMBDA, apply_convection, assemble_divergence, assemble_mass,
                       assemble_rhs, assemble_triple_norm, assemble_viscosity)
from .errors import RelaxHdgError
from .mesh import (Mesh, build_mesh, generate_channel_cylinder, generate_rectangle,
                   generate_unit_square, parse_mesh_spec, read_mesh, write_mesh)
from .reconstruction import build_reconstruction, reconstruct
from .solvers import ImexIntegrator, initial_state, run_unsteady, solve_stokes
from .spaces import FeFunction, HDGSpace, build_dofmap, evaluate, interpolate_bdm

__version__ = "0.1.0"
