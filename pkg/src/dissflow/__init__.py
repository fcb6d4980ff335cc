"""Similarity flows that diagonalise non-Hermitian (Lindbladian) matrices.

``dL/dl = [eta(L), L]`` with one of three generators is integrated by an
embedded Runge-Kutta pair; built on it are the superfermion matrix of
quadratic master equations, two many-mode models and a second-order
Schrieffer-Wolff oracle.
"""

from importlib.metadata import PackageNotFoundError, version

from .flowengine import FlowConfig, FlowIntegrationError, FlowResult, run_flow, run_flow_with_fallback
from .generators import GeneratorKind, compute_generator
from .matcore import reference_spectrum, spectral_discrepancy

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "FlowConfig",
    "FlowIntegrationError",
    "FlowResult",
    "GeneratorKind",
    "compute_generator",
    "reference_spectrum",
    "run_flow",
    "run_flow_with_fallback",
    "spectral_discrepancy",
    "__version__",
]
