"""Random walks, loop erasure and spanning forests on the drifted lattice.

The network has vertices ``(n, x)`` in ``Z x Z^d`` and edge conductances
``exp(lam * max(n, n'))``, so its random walk drifts upward in ``n``.
"""

from .errors import DomainError, SolverError
from .lattice import LatticeParams, Vertex
from .walk import Path
from .wilson import ROOT, WIRED, FiniteBox, Forest

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "SolverError",
    "LatticeParams",
    "Vertex",
    "Path",
    "ROOT",
    "WIRED",
    "FiniteBox",
    "Forest",
]
