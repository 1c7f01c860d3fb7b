"""Decomposition solvers for block-angular convex quadratic programs.

    min  sum_i theta_i(x_i) + 1/2 <x_i, Q_i x_i> + <c_i, x_i>
    s.t. sum_i A_i x_i = b0,  D_i x_i = b_i (i >= 1),  x_i in K_i

Two solver families are provided: a dual semi-proximal ADMM with a
symmetric Gauss-Seidel sweep (``sgs_admm``) and primal proximal augmented
Lagrangian methods (``palm``). Hot sparse kernels are compiled when the
extension is available and fall back to NumPy otherwise; see ``backend``.
"""

from . import backend
from .generators import FAMILIES, desk_suite, gen_cta, gen_mcf, gen_random, generate
from .io import ParseError, read_problem, write_problem
from .model import Block, BlockAngularProblem, Cone, QuadTerm, SeparableFunction, validate
from .oracle import OracleError, oracle_solve
from .palm import PalmParams, build_majorizer, check_theorem1, dqa_solve, spalm_solve
from .report import MaxIterations, SolveReport
from .residuals import PrimalDualIterate, compute_residuals
from .sgs_admm import SgsAdmmParams
from .sgs_admm import solve as sgs_admm_solve
from .solvers import SOLVERS, run_solver

__version__ = "0.1.0"

__all__ = [
    "FAMILIES", "SOLVERS", "Block", "BlockAngularProblem", "Cone", "MaxIterations", "OracleError",
    "PalmParams", "ParseError", "PrimalDualIterate", "QuadTerm", "SeparableFunction", "SgsAdmmParams",
    "SolveReport", "backend", "build_majorizer", "check_theorem1", "compute_residuals", "desk_suite",
    "dqa_solve", "gen_cta", "gen_mcf", "gen_random", "generate", "oracle_solve", "read_problem",
    "run_solver", "sgs_admm_solve", "spalm_solve", "validate", "write_problem",
]
