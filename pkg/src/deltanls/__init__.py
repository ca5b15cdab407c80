"""Small solitons of the 1-d NLS with an attractive delta potential."""

from .grid import Field, SpatialGrid, TimeGrid
from .hamiltonian import DeltaHamiltonian, ModelParams, ScatteringData, hamiltonian_for

__all__ = ["Field", "SpatialGrid", "TimeGrid", "DeltaHamiltonian", "ModelParams", "ScatteringData", "hamiltonian_for"]
__version__ = "0.1.0"
