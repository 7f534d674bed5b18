"""Node fields: pressure normalization and field transfer between meshes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySource, FieldLengthMismatch, WrongSpace, ZeroSigma
from .mesh import VolumeMesh
from .spatial import NearestIndex, TetLocator

SPACES = ("raw", "normalized")
CHANNELS = ("pressure", "velocity_x", "velocity_y", "velocity_z")


@dataclass(frozen=True)
class NodeFields:
    """Per-node pressure and velocity.

    Raw fields are in Pa and m/s; normalized fields are dimensionless.
    """

    pressure: np.ndarray
    velocity: np.ndarray
    space: str = "raw"

    def __post_init__(self):
        p = np.array(self.pressure, dtype=np.float64).reshape(-1)
        v = np.array(self.velocity, dtype=np.float64).reshape(-1, 3)
        if len(p) != len(v):
            raise FieldLengthMismatch(f"{len(p)} pressures but {len(v)} velocities")
        if self.space not in SPACES:
            raise WrongSpace(f"unknown field space {self.space!r}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise FieldLengthMismatch("non-finite field values")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "pressure", p)
        object.__setattr__(self, "velocity", v)

    def __len__(self):
        return len(self.pressure)

    def as_array(self) -> np.ndarray:
        """(N, 4) array: pressure, vx, vy, vz."""
        return np.column_stack([self.pressure, self.velocity])

    @classmethod
    def from_array(cls, arr, space="raw"):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[:, 0], arr[:, 1:4], space)

    @classmethod
    def zeros(cls, n, space="normalized"):
        return cls(np.zeros(n), np.zeros((n, 3)), space)

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocity, axis=1)


@dataclass(frozen=True)
class NormStats:
    """Mean and standard deviation of cube-rooted pressure and each velocity component."""

    pressure_mean: float
    pressure_std: float
    velocity_mean: tuple
    velocity_std: tuple
    provenance: str = "unspecified"

    def __post_init__(self):
        vm = tuple(float(x) for x in self.velocity_mean)
        vs = tuple(float(x) for x in self.velocity_std)
        if len(vm) != 3 or len(vs) != 3:
            raise ValueError("velocity stats need three components")
        object.__setattr__(self, "velocity_mean", vm)
        object.__setattr__(self, "velocity_std", vs)
        for s in (self.pressure_std, *vs):
            if not s > 0:
                raise ZeroSigma("every channel needs a positive standard deviation")

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.pressure_mean, *self.velocity_mean])

    @property
    def std(self) -> np.ndarray:
        return np.array([self.pressure_std, *self.velocity_std])

    @classmethod
    def from_fields(cls, samples, provenance="computed", zero_std_fallback: float | None = None):
        """Population statistics over one or more raw field sets.

        Channels with zero spread raise :class:`ZeroSigma` unless
        ``zero_std_fallback`` supplies a replacement scale.
        """
        if isinstance(samples, NodeFields):
            samples = [samples]
        arr = np.concatenate([s.as_array() for s in samples])
        arr[:, 0] = np.cbrt(arr[:, 0])
        mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        if zero_std_fallback is not None:
            std = np.where(std > 0, std, zero_std_fallback)
        return cls(float(mean[0]), float(std[0]), tuple(mean[1:]), tuple(std[1:]), provenance)

    def to_dict(self) -> dict:
        out = {}
        for name, m, s in zip(CHANNELS, self.mean, self.std):
            out[name] = {"mean": float(m), "std": float(s)}
        out["provenance"] = self.provenance
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                d["pressure"]["mean"],
                d["pressure"]["std"],
                tuple(d[c]["mean"] for c in CHANNELS[1:]),
                tuple(d[c]["std"] for c in CHANNELS[1:]),
                d.get("provenance", "unspecified"),
            )
        except KeyError as exc:
            raise ValueError(f"norm stats missing key {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def normalize_fields(fields: NodeFields, stats: NormStats) -> NodeFields:
    """Signed cube root of pressure, then z-score every channel."""
    if fields.space != "raw":
        raise WrongSpace("normalize_fields expects raw fields")
    arr = fields.as_array()
    arr[:, 0] = np.cbrt(arr[:, 0])
    arr = (arr - stats.mean) / stats.std
    return NodeFields.from_array(arr, "normalized")


def denormalize_fields(fields: NodeFields, stats: NormStats) -> NodeFields:
    """Inverse of :func:`normalize_fields`; pressure is cubed again."""
    if fields.space != "normalized":
        raise WrongSpace("denormalize_fields expects normalized fields")
    arr = fields.as_array() * stats.std + stats.mean
    arr[:, 0] = arr[:, 0] ** 3
    return NodeFields.from_array(arr, "raw")


@dataclass
class TransferReport:
    n_points: int
    extrapolated: int
    extrapolated_ids: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {"n_points": self.n_points, "extrapolated": self.extrapolated}


def transfer_fields(src_mesh: VolumeMesh, src_fields: NodeFields, dst_points, tol: float = 1e-9):
    """Barycentric interpolation of source node fields at arbitrary points.

    Points outside every source tet take the values of the nearest source
    node and are counted in the returned :class:`TransferReport`.
    """
    if src_mesh is None or src_mesh.n_vertices == 0 or len(src_fields) == 0:
        raise EmptySource("no source mesh or fields")
    if len(src_fields) != src_mesh.n_vertices:
        raise FieldLengthMismatch(
            f"{len(src_fields)} field values for {src_mesh.n_vertices} source nodes"
        )
    dst = np.atleast_2d(np.asarray(dst_points, dtype=np.float64))
    values = src_fields.as_array()

    locator = TetLocator(src_mesh.vertices, src_mesh.tets)
    tet, bary = locator.locate(dst, tol=tol)
    out = np.empty((len(dst), values.shape[1]))

    inside = tet >= 0
    if np.any(inside):
        # clip tolerance-level negatives so results stay inside the cell's range
        b = np.clip(bary[inside], 0.0, None)
        b /= b.sum(axis=1, keepdims=True)
        corner_vals = values[src_mesh.tets[tet[inside]]]
        out[inside] = np.einsum("nk,nkc->nc", b, corner_vals)

    nearest_idx, nearest_d2 = NearestIndex(src_mesh.vertices).nearest(dst)
    outside = np.flatnonzero(~inside)
    out[outside] = values[nearest_idx[outside]]
    # points sitting exactly on a source node reproduce it without rounding
    on_node = nearest_d2 == 0.0
    out[on_node] = values[nearest_idx[on_node]]

    report = TransferReport(len(dst), int(len(outside)), outside)
    return NodeFields.from_array(out, src_fields.space), report
