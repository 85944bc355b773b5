"""Quantum beats of a six-level atom in a two-mode cavity.

Modules: ``hilbert`` (basis and operators), ``liouville`` (master equation,
propagation, steady state), ``beats`` (conditional correlations and fringe
analysis), ``control`` (shelving and probabilistic error correction),
``beam`` (atomic-beam ensemble) and ``cli``.
"""

from .beats import CorrelationTrace, FringeMetrics, fringe_metrics, g2_undriven
from .hilbert import AtomicLevel, CompositeBasis, build_basis
from .kernels import BACKEND
from .liouville import DensityMatrix, SystemParams, make_generator, propagate, steady_state

__version__ = "0.1.0"

__all__ = [
    "AtomicLevel", "BACKEND", "CompositeBasis", "CorrelationTrace", "DensityMatrix",
    "FringeMetrics", "SystemParams", "build_basis", "fringe_metrics", "g2_undriven",
    "make_generator", "propagate", "steady_state",
]
