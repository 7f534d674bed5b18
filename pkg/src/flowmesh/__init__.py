"""Template-mesh deformation, image-to-mesh inference and flow-field evaluation."""

from .errors import FlowmeshError, NumericalError
from .fields import NodeFields, NormStats, denormalize_fields, normalize_fields, transfer_fields
from .image import ImageVolume, trilinear_sample
from .losses import DEFAULT_WEIGHTS, LossReport, LossWeights, mesh_loss, total_loss
from .mesh import CapPatch, ScaledLaplacian, VolumeMesh, build_mesh, extract_surface, scaled_laplacian

__version__ = "0.1.0"

__all__ = [
    "CapPatch",
    "FlowmeshError",
    "ImageVolume",
    "LossReport",
    "LossWeights",
    "NodeFields",
    "NormStats",
    "NumericalError",
    "DEFAULT_WEIGHTS",
    "ScaledLaplacian",
    "VolumeMesh",
    "build_mesh",
    "denormalize_fields",
    "extract_surface",
    "mesh_loss",
    "normalize_fields",
    "scaled_laplacian",
    "total_loss",
    "transfer_fields",
    "trilinear_sample",
]
