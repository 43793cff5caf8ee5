"""One- and two-level nonlinear Schwarz solvers with an RGDSW coarse space."""

from .coarse import CoarseBasis, build_coarse_basis, classify_interface
from .errors import (BreakdownError, CoarseSpaceError, EvaluationError, InnerDivergenceError,
                     InvalidArgumentError, NlSchwarzError, NonFiniteError,
                     NonPhysicalDeformationError, SingularMatrixError, StaleStateError)
from .experiments import (ExperimentConfig, RunRecord, emit_report, run_force_ramp,
                          run_weak_scaling)
from .fem import MaterialParams, NonlinearProblem, assemble, first_piola, piola_tangent
from .mesh import Decomposition, Mesh, decompose, generate_structured_mesh
from .numerics import GmresResult, LuFactorization, gmres
from .schwarz import (NewtonKrylovSchwarz, NonlinearSchwarz, SolveReport, SolverConfig,
                      nks_solve, solve)

__version__ = "0.1.0"
