"""Mask overlap and surface distance metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptySurface, GridMismatch
from ..mesh import VolumeMesh
from ..spatial import TetLocator, TriangleDistance


@dataclass(frozen=True)
class GridSpec:
    """Voxel grid geometry; ``origin`` is the center of voxel (0, 0, 0)."""

    dims: tuple
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in np.broadcast_to(self.dims, 3))
        spacing = tuple(float(s) for s in np.broadcast_to(self.spacing, 3))
        origin = tuple(float(s) for s in np.broadcast_to(self.origin, 3))
        if min(dims) < 1 or min(spacing) <= 0:
            raise ValueError("grid needs dims >= 1 and positive spacing")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    def centers(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    @classmethod
    def covering(cls, points, spacing, pad: int = 1):
        """Grid aligned to ``spacing`` that covers ``points`` with ``pad`` voxels."""
        points = np.asarray(points, dtype=np.float64)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), 3)
        lo = np.floor(points.min(axis=0) / spacing) - pad
        hi = np.ceil(points.max(axis=0) / spacing) + pad
        dims = (hi - lo + 1).astype(int)
        return cls(tuple(dims), tuple(spacing), tuple(lo * spacing))


@dataclass(frozen=True)
class VoxelMask:
    grid: GridSpec
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool).reshape(self.grid.dims)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())


def voxelize(mesh: VolumeMesh, grid: GridSpec | None = None, spacing=1.0, tol: float = 1e-9) -> VoxelMask:
    """Mark voxels whose center lies in any tet (boundary inclusive).

    Without ``grid`` a grid aligned to ``spacing`` and covering the mesh
    bounding box is used.
    """
    if grid is None:
        grid = GridSpec.covering(mesh.vertices, spacing)
    tet, _ = TetLocator(mesh.vertices, mesh.tets).locate(grid.centers(), tol=tol)
    return VoxelMask(grid, tet >= 0)


def dice(a: VoxelMask, b: VoxelMask) -> float:
    """``2 |A & B| / (|A| + |B|)``; 1.0 when both masks are empty."""
    if a.grid != b.grid:
        raise GridMismatch("masks live on different grids")
    na, nb = a.count, b.count
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.occupancy & b.occupancy))
    return 2.0 * inter / (na + nb)


def directed_distances(points, vertices, faces) -> np.ndarray:
    if len(points) == 0 or len(faces) == 0:
        raise EmptySurface("empty surface")
    return TriangleDistance(vertices, faces).distance(points)


def surface_distances(surf_a, surf_b, hd_percentile: float | None = None) -> dict:
    """Average symmetric surface distance and Hausdorff distance.

    Each surface is a ``(vertices, faces)`` pair or a :class:`VolumeMesh`
    (its boundary is used). Distances run from every vertex of one surface
    to the exact triangle surface of the other, in both directions; ASSD is
    the mean and HD the maximum of the pooled set (or the given percentile).
    """
    va, fa = _surface(surf_a)
    vb, fb = _surface(surf_b)
    if len(fa) == 0 or len(fb) == 0:
        raise EmptySurface("empty surface")
    pa = va[np.unique(fa)]
    pb = vb[np.unique(fb)]
    d = np.concatenate([directed_distances(pa, vb, fb), directed_distances(pb, va, fa)])
    hd = float(np.max(d)) if hd_percentile is None else float(np.percentile(d, hd_percentile))
    return {"assd": float(np.mean(d)), "hd": hd}


def _surface(s):
    if isinstance(s, VolumeMesh):
        return s.vertices, s.faces
    v, f = s
    return np.asarray(v, dtype=np.float64), np.asarray(f, dtype=np.int64).reshape(-1, 3)
