from .centerline import (
    Centerline,
    centerline_profile,
    frechet,
    profile_curve,
    resample_centerline,
)
from .cfd import ERROR_CHANNELS, bland_altman, node_errors, population_node_errors
from .report import MetricsReport
from .segmentation import GridSpec, VoxelMask, dice, surface_distances, voxelize
from .stats import wilcoxon_signed_rank

__all__ = [
    "Centerline",
    "ERROR_CHANNELS",
    "GridSpec",
    "MetricsReport",
    "VoxelMask",
    "bland_altman",
    "centerline_profile",
    "dice",
    "frechet",
    "node_errors",
    "population_node_errors",
    "profile_curve",
    "resample_centerline",
    "surface_distances",
    "voxelize",
    "wilcoxon_signed_rank",
]
