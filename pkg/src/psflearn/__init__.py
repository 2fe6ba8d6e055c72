"""Field-varying PSF estimation from edge-chart captures."""

from .pupil import BasisSpec, WavefrontModel, make_pupil_grid
from .optics import PSFKernel, PSFStack, ShiftVector
from .measure import MeasurementSet

__all__ = ["BasisSpec", "WavefrontModel", "make_pupil_grid", "PSFKernel", "PSFStack",
           "ShiftVector", "MeasurementSet"]
__version__ = "0.1.0"
