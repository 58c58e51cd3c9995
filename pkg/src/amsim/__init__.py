"""Strand-level fiber dynamics with a one-way coupled ghost rest shape."""

__version__ = "0.1.0"

from .backend import backend_name
from .strand import (GhostConfig, NonHookeanCurve, SimParams, SpringNetwork,
                     Strand, StrandState)

__all__ = ["backend_name", "GhostConfig", "NonHookeanCurve", "SimParams",
           "SpringNetwork", "Strand", "StrandState", "__version__"]
