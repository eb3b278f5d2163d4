"""Smooth NLP layer: forward-mode AD, element-block problems, interior-point solver."""
from .ad import Dual, ad_eval, concatenate, constant, seed, stack, value_of
from .ipm import IpmOptions, LineSearchFailure, MaxIterations, NlpSolverError, SingularSystem, solve
from .problem import Block, DerivativeReport, KktPoint, SmoothNlp, check_derivatives, dense_nlp
from .solvers import NlpSolver, available_solvers, get_solver, register_solver

__all__ = [
    "Block",
    "DerivativeReport",
    "Dual",
    "IpmOptions",
    "KktPoint",
    "LineSearchFailure",
    "MaxIterations",
    "NlpSolver",
    "NlpSolverError",
    "SingularSystem",
    "SmoothNlp",
    "ad_eval",
    "available_solvers",
    "check_derivatives",
    "concatenate",
    "constant",
    "dense_nlp",
    "get_solver",
    "register_solver",
    "seed",
    "solve",
    "stack",
    "value_of",
]
