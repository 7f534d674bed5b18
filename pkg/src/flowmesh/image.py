"""Dense 3D image volumes and trilinear sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class ImageVolume:
    """Multi-channel 3D grid.

    ``data`` has shape ``(C, nx, ny, nz)`` and ``data[c, i, j, k]`` is the
    value at ``origin + (i, j, k) * spacing`` (voxel centers, mm).
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or min(data.shape) < 1:
            raise ShapeMismatch(f"image data must be (C, nx, ny, nz), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeMismatch("image contains non-finite values")
        spacing = tuple(float(s) for s in np.broadcast_to(self.spacing, 3))
        origin = tuple(float(s) for s in np.broadcast_to(self.origin, 3))
        if min(spacing) <= 0:
            raise ShapeMismatch("spacing must be positive")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape[1:])

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def to_index(self, points_mm) -> np.ndarray:
        """Continuous voxel index of points given in mm."""
        return (np.asarray(points_mm, dtype=np.float64) - self.origin) / np.asarray(self.spacing)

    def to_mm(self, index) -> np.ndarray:
        return np.asarray(index, dtype=np.float64) * np.asarray(self.spacing) + self.origin


def sample_grid(grid: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Trilinear sample of a channel-last grid ``(nx, ny, nz, C)``.

    ``index`` holds continuous voxel indices, shape (N, 3). Points outside
    the grid are clamped to the border voxels.
    """
    shape = np.array(grid.shape[:3])
    idx = np.clip(np.asarray(index, dtype=np.float64), 0.0, shape - 1)
    base = np.minimum(np.floor(idx).astype(np.int64), np.maximum(shape - 2, 0))
    t = idx - base
    upper = np.minimum(base + 1, shape - 1)
    out = np.zeros((len(idx), grid.shape[3]))
    for dx in (0, 1):
        wx = t[:, 0] if dx else 1.0 - t[:, 0]
        ix = upper[:, 0] if dx else base[:, 0]
        for dy in (0, 1):
            wy = t[:, 1] if dy else 1.0 - t[:, 1]
            iy = upper[:, 1] if dy else base[:, 1]
            for dz in (0, 1):
                wz = t[:, 2] if dz else 1.0 - t[:, 2]
                iz = upper[:, 2] if dz else base[:, 2]
                out += (wx * wy * wz)[:, None] * grid[ix, iy, iz]
    return out


def trilinear_sample(volume: ImageVolume, points_mm) -> np.ndarray:
    """Per-point feature vectors (N, C) at positions given in mm."""
    grid = np.moveaxis(volume.data, 0, -1)
    return sample_grid(grid, volume.to_index(np.atleast_2d(points_mm)))
