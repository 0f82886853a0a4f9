"""Linear stability of phototactic bioconvection under oblique collimated and diffuse light."""

from .photomodel import SuspensionParams, TaxisKind, TopBoundary, refraction_angle
from .radiative import RadiationField, solve_lambda, uniform_intensity

__all__ = [
    "SuspensionParams",
    "TaxisKind",
    "TopBoundary",
    "refraction_angle",
    "RadiationField",
    "solve_lambda",
    "uniform_intensity",
]
__version__ = "0.1.0"
