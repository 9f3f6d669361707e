"""Hybridized Whitney-form discretization of linear port-Hamiltonian wave systems."""

from .mesh import BoundaryPartition, Mesh, build_structured_box, tag_boundary
from .physystem import (
    Formulation,
    SystemBlocks,
    Weights,
    build_dual_hybrid,
    build_mixed_reference,
    build_primal_hybrid,
    interconnect,
)
from .solver import PhState, TimeGrid, integrate, monolithic_solve, prepare, step

__all__ = [
    "BoundaryPartition",
    "Formulation",
    "Mesh",
    "PhState",
    "SystemBlocks",
    "TimeGrid",
    "Weights",
    "build_dual_hybrid",
    "build_mixed_reference",
    "build_primal_hybrid",
    "build_structured_box",
    "integrate",
    "interconnect",
    "monolithic_solve",
    "prepare",
    "step",
    "tag_boundary",
]
