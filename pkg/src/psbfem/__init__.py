"""Polyhedral scaled boundary finite elements for 3D heat conduction."""
from .mesh import Material, Mesh, MeshError, PolyhedronCell, ValidationReport, validate_mesh
from .element import ElementError, element_matrices
from .solver import (
    BoundaryConditions,
    FieldResult,
    SolverError,
    ThermalSystem,
    TransientConfig,
    assemble,
    run_transient,
    solve_steady,
)

__version__ = "0.1.0"

__all__ = [
    "Material",
    "Mesh",
    "MeshError",
    "PolyhedronCell",
    "ValidationReport",
    "validate_mesh",
    "ElementError",
    "element_matrices",
    "BoundaryConditions",
    "FieldResult",
    "SolverError",
    "ThermalSystem",
    "TransientConfig",
    "assemble",
    "run_transient",
    "solve_steady",
]
