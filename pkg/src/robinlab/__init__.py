"""Positive solutions of -Lap u + xi u = lam u + f(u) with Robin boundary conditions.

P1 finite elements on intervals and rectangles, principal eigenpairs,
truncated energy functionals and their critical points, and parameter
sweeps over lambda.
"""
from .mesh import Domain, Mesh, build_interval_mesh, build_mesh, build_rectangle_mesh
from .forms import AssembledForms, ScalarField, VariationalProblem, assemble
from .spectrum import EigenResult, coercivity_shift, eigenvalues, picone_defect, principal_eigenpair
from .nonlinearity import Nonlinearity, builtin, check_hypotheses, make_truncation
from .solvers import Certificate, SolveResult, Tolerances, certify, minimize, mountain_pass
from .branch import Branch, check_left_continuity, check_monotone, summarize, sweep

__version__ = "0.1.0"
