"""Reconstruction of isometric immersions from metric, second fundamental
form and normal connection data on a gridded chart."""

from .chart import ChartGrid, MatrixForm, ScalarField
from .cartan import GeometryData, assemble_connection, curvature, gcr_residuals

__version__ = "0.1.0"

__all__ = [
    "ChartGrid",
    "MatrixForm",
    "ScalarField",
    "GeometryData",
    "assemble_connection",
    "curvature",
    "gcr_residuals",
]
