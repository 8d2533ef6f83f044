"""Interpolatory HDG solver for semilinear reaction-diffusion PDEs.

Degree-k hybridizable discontinuous Galerkin discretization with an
element-local degree-(k+1) postprocessing that both superconverges and
feeds the nodal evaluation of the nonlinearity, so every system matrix
is assembled exactly once per run.
"""

from .analysis import ConvergenceTable, l2_error, run_convergence
from .felib import DofLayout, QuadratureRule, ReferenceElement, build_dof_layout
from .mesh import Mesh, circle_mesh, generate_structured_square, load_mesh, mesh_metrics
from .problems import ProblemSpec, allen_cahn, schnakenberg
from .solver import DiscreteSystem, SolverConfig, State, run

__all__ = [
    "ConvergenceTable",
    "DiscreteSystem",
    "DofLayout",
    "Mesh",
    "ProblemSpec",
    "QuadratureRule",
    "ReferenceElement",
    "SolverConfig",
    "State",
    "allen_cahn",
    "build_dof_layout",
    "circle_mesh",
    "generate_structured_square",
    "l2_error",
    "load_mesh",
    "mesh_metrics",
    "run",
    "run_convergence",
    "schnakenberg",
]
