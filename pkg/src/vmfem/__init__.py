"""vmfem: mixed finite element solver for compressible flow at desk scale."""

from .fem import (EdgeRule, FunctionSpace, LagrangeBasis, QuadratureRule,
                  VectorSpace, build_taylor_hood, convergence_order, edge_rule,
                  l2_error, taylor_hood_ndof, triangle_rule)
from .forms import (CompressibleProblem, DirichletBC, Discretization, FluxParams,
                    IncompressibleProblem, Residual, State, assemble_compressible,
                    assemble_incompressible, assemble_jacobian, flux_phi_inv,
                    flux_phi_vis, flux_sigma_inv, flux_sigma_vis,
                    flux_varphi_lambda, jump_avg, jump_avg_vector,
                    residual_compressible, residual_incompressible)
from .mesh import (Face, Mesh, face_sides, generate_structured, mesh_h,
                   read_mesh, write_mesh)
from .physics import (FluidProperties, InvalidStateError, conductivity,
                      eos_pressure, stress_tensor, sutherland_mu,
                      viscous_dissipation)
from .solver import (BDFScheme, LinearSolveError, NewtonConfig, NewtonError,
                     NewtonReport, TimeStepper, advance, bdf_coefficients,
                     newton_solve, sparse_lu_solve)

__version__ = "0.1.0"
