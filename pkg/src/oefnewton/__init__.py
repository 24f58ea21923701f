"""Objective-evaluation-free Newton-type methods with inexact derivatives."""

from .linalg import cg_solve, min_eigen, regularized_hessian
from .oracles import InexactnessPolicy, Oracle
from .pnm import PNMConfig, pnm_run
from .problems import CompositeProblem, builtin_problem, kkt_residual
from .prox import BoxIndicator, L1Norm, ZeroFunction, prox
from .rn2cm import RN2CMConfig, rn2cm_run
from .rnm import RNMConfig, rnm_run, sc_run

__all__ = [
    "BoxIndicator", "CompositeProblem", "InexactnessPolicy", "L1Norm", "Oracle", "PNMConfig",
    "RN2CMConfig", "RNMConfig", "ZeroFunction", "builtin_problem", "cg_solve", "kkt_residual",
    "min_eigen", "pnm_run", "prox", "regularized_hessian", "rn2cm_run", "rnm_run", "sc_run",
]
