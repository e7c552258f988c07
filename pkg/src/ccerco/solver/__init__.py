"""Conic interior-point solver and branch-and-bound for MI-SOCPs."""

from .bnb import solve_misocp
from .ipm import solve_convex
from .program import SOC, ConicProgram, ProgramBuilder, ResidualReport, Solution, check_solution, dump_program

__all__ = [
    "SOC",
    "ConicProgram",
    "ProgramBuilder",
    "ResidualReport",
    "Solution",
    "check_solution",
    "dump_program",
    "solve_convex",
    "solve_misocp",
]
