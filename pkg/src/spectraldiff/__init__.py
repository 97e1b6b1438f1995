"""Sturm-Liouville ground energies: finite differences, simulated QSVT and stochastic inflation."""
from importlib import metadata

from .grid import DomainBox, FDMatrix, GridVector, OperatorSpec, UniformGrid, assemble_fd_matrix, laplacian_spec
from .qsvt import EstimatorConfig, QueryLedger, end_to_end_estimate, est_eig
from .solvers import richardson_fit, smallest_eigs

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

__all__ = [
    "DomainBox",
    "EstimatorConfig",
    "FDMatrix",
    "GridVector",
    "OperatorSpec",
    "QueryLedger",
    "UniformGrid",
    "assemble_fd_matrix",
    "end_to_end_estimate",
    "est_eig",
    "laplacian_spec",
    "richardson_fit",
    "smallest_eigs",
]
