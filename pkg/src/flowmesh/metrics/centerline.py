"""Centerline resampling, k-nearest-node profiles and discrete Frechet distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegeneratePolyline, EmptyCurve, KTooLarge, LengthMismatch, ZeroRange
from ..fields import NodeFields
from ..mesh import VolumeMesh
from ..spatial import NearestIndex

LABELS = ("LPA", "RPA", "inlet", "other")


@dataclass(frozen=True)
class Centerline:
    points: np.ndarray
    label: str = "other"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 2:
            raise DegeneratePolyline("a centerline needs at least two points")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise DegeneratePolyline("consecutive centerline points coincide")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def arc_length(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


def resample_centerline(polyline, n: int = 100, label: str | None = None) -> Centerline:
    """``n`` points at equal arc-length spacing; endpoints kept exactly."""
    if isinstance(polyline, Centerline):
        label = label or polyline.label
        pts = polyline.points
    else:
        pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 3)
    if n < 2:
        raise ValueError("n must be >= 2")
    if len(pts) < 2:
        raise DegeneratePolyline("need at least two points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    pts, seg = pts[keep], seg[seg > 0]
    total = float(np.sum(seg))
    if total == 0 or len(pts) < 2:
        raise DegeneratePolyline("polyline has zero length")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, cum[-1], n)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    t = (targets - cum[idx]) / seg[idx]
    out = pts[idx] + t[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Centerline(out, label or "other")


def centerline_profile(mesh: VolumeMesh, fields: NodeFields, centerline, k: int = 5) -> dict:
    """Unweighted mean pressure and speed of the ``k`` nearest nodes per point.

    Returns arrays ``s`` (normalized arc length), ``pressure`` and
    ``velocity_magnitude``.
    """
    pts = centerline.points if isinstance(centerline, Centerline) else np.asarray(centerline, dtype=np.float64)
    if len(fields) != mesh.n_vertices:
        raise LengthMismatch("fields do not match the mesh node count")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > mesh.n_vertices:
        raise KTooLarge(f"k={k} exceeds the node count {mesh.n_vertices}")
    idx, _ = NearestIndex(mesh.vertices).k_nearest(pts, k)
    speed = fields.speed
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = cum / cum[-1] if cum[-1] > 0 else cum
    return {
        "s": s,
        "pressure": fields.pressure[idx].mean(axis=1),
        "velocity_magnitude": speed[idx].mean(axis=1),
    }


def profile_curve(s, values) -> np.ndarray:
    """Embed a scalar profile as 2D points (normalized arc length, value)."""
    return np.column_stack([np.asarray(s, dtype=np.float64), np.asarray(values, dtype=np.float64)])


def frechet(curve_a, curve_b, normalize_range: float | None = None) -> float:
    """Discrete Frechet distance between two point sequences.

    1D inputs are treated as values at evenly spaced normalized arc length.
    With ``normalize_range`` the distance is divided by that range and
    reported in percent.
    """
    a = _as_curve(curve_a)
    b = _as_curve(curve_b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCurve("empty curve")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0] = np.maximum.accumulate(d[0])
    ca[:, 0] = np.maximum.accumulate(d[:, 0])
    for i in range(1, n):
        row = ca[i]
        prev = ca[i - 1]
        di = d[i]
        # row-wise DP: best of diagonal and vertical moves, then a running
        # pass for horizontal moves
        best = np.minimum(prev[1:], prev[:-1])
        for j in range(1, m):
            row[j] = max(min(best[j - 1], row[j - 1]), di[j])
    value = float(ca[-1, -1])
    if normalize_range is not None:
        if not normalize_range > 0:
            raise ZeroRange("normalization range must be positive")
        value = 100.0 * value / float(normalize_range)
    return value


def _as_curve(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        if len(c) == 0:
            return c.reshape(0, 2)
        s = np.linspace(0.0, 1.0, len(c)) if len(c) > 1 else np.zeros(1)
        return profile_curve(s, c)
    return c
