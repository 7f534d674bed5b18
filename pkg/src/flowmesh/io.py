"""File formats: JSON meshes, JSON + raw images, centerlines, legacy VTK import.

JSON is written canonically: keys in a fixed order and floats in their
shortest round-trip form, so identical data always gives identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FlowmeshError
from .fields import NodeFields, NormStats
from .image import ImageVolume
from .mesh import CapPatch, VolumeMesh, build_mesh
from .metrics.centerline import Centerline

FORMAT_VERSION = 1


class FormatError(FlowmeshError):
    """A file could not be parsed into a valid object."""


def dumps(obj, indent: int | None = None) -> str:
    """Canonical JSON text (insertion-ordered keys, no NaN) with a trailing newline."""
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(obj, indent=indent, separators=separators, allow_nan=False) + "\n"


def write_json(path, obj, indent: int | None = 2) -> None:
    Path(path).write_text(dumps(obj, indent))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# ----------------------------------------------------------------------
# meshes

def mesh_to_dict(mesh: VolumeMesh, fields: NodeFields | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "vertices": [[float(c) for c in row] for row in mesh.vertices],
        "tets": mesh.tets.tolist(),
        "caps": [{"name": c.name, "faces": c.faces.tolist()} for c in mesh.caps],
    }
    if fields is not None:
        if len(fields) != mesh.n_vertices:
            raise FormatError("fields do not match the mesh node count")
        doc["point_data"] = {
            "pressure": [float(p) for p in fields.pressure],
            "velocity": [[float(c) for c in row] for row in fields.velocity],
            "space": fields.space,
        }
    return doc


def mesh_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise FormatError("a mesh document must be a JSON object")
    try:
        if doc.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported mesh format_version {doc.get('format_version')!r}")
        vertices = np.asarray(doc["vertices"], dtype=np.float64).reshape(-1, 3)
        tets = np.asarray(doc["tets"], dtype=np.int64).reshape(-1, 4)
        caps = [CapPatch(c["name"], np.asarray(c["faces"], dtype=np.int64).reshape(-1, 3)) for c in doc.get("caps", [])]
        pd = doc.get("point_data")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FlowmeshError):
            raise
        raise FormatError(f"malformed mesh document: {exc}") from None
    mesh = build_mesh(vertices, tets, caps or None)
    fields = None
    if pd is not None:
        fields = NodeFields(pd["pressure"], pd["velocity"], pd.get("space", "raw"))
        if len(fields) != mesh.n_vertices:
            raise FormatError("point_data length does not match the vertex count")
    return mesh, fields


def save_mesh(path, mesh: VolumeMesh, fields: NodeFields | None = None) -> None:
    Path(path).write_text(dumps(mesh_to_dict(mesh, fields)))


def load_mesh(path):
    """Return ``(VolumeMesh, NodeFields or None)``."""
    return mesh_from_dict(read_json(path))


# ----------------------------------------------------------------------
# images

def save_image(path, image: ImageVolume) -> None:
    """Write a JSON sidecar at ``path`` and the float32 blob next to it.

    The blob holds channel after channel, each x-fastest (then y, then z).
    """
    path = Path(path)
    blob = path.with_suffix(".raw")
    data = np.asarray(image.data)
    flat = np.concatenate([data[c].ravel(order="F") for c in range(image.channels)])
    blob.write_bytes(flat.astype("<f4").tobytes())
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "dims": list(image.dims),
            "spacing": list(image.spacing),
            "origin": list(image.origin),
            "channels": image.channels,
            "dtype": "f32",
            "data": blob.name,
        },
    )


def load_image(path) -> ImageVolume:
    path = Path(path)
    doc = read_json(path)
    if doc.get("dtype") != "f32":
        raise FormatError(f"unsupported image dtype {doc.get('dtype')!r}")
    dims = [int(d) for d in doc["dims"]]
    c = int(doc.get("channels", 1))
    raw = (path.parent / doc["data"]).read_bytes()
    count = c * int(np.prod(dims))
    if len(raw) != 4 * count:
        raise FormatError(f"image blob has {len(raw)} bytes, expected {4 * count}")
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    data = flat.reshape(c, -1)
    data = np.stack([data[k].reshape(dims, order="F") for k in range(c)])
    return ImageVolume(data, tuple(doc["spacing"]), tuple(doc["origin"]))


# ----------------------------------------------------------------------
# centerlines and stats

def save_centerlines(path, centerlines) -> None:
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "centerlines": [
                {"label": c.label, "points": [[float(x) for x in p] for p in c.points]} for c in centerlines
            ],
        },
    )


def load_centerlines(path) -> list:
    doc = read_json(path)
    try:
        return [Centerline(np.asarray(c["points"], dtype=np.float64), c.get("label", "other")) for c in doc["centerlines"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed centerline file: {exc}") from None


def save_stats(path, stats: NormStats) -> None:
    write_json(path, stats.to_dict())


def load_stats(path) -> NormStats:
    try:
        return NormStats.from_dict(read_json(path))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed stats file: {exc}") from None


# ----------------------------------------------------------------------
# phantom bundles

def save_bundle(directory, bundle) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mesh(d / "mesh.json", bundle.mesh, bundle.fields)
    save_centerlines(d / "centerlines.json", bundle.centerlines)
    save_stats(d / "stats.json", bundle.stats)
    if bundle.image is not None:
        save_image(d / "image.json", bundle.image)
    write_json(d / "manifest.json", bundle.manifest)


# ----------------------------------------------------------------------
# legacy VTK

VTK_TETRA = 10


def read_vtk_unstructured(path):
    """Parse a legacy ASCII VTK unstructured grid of tetrahedra.

    Point data arrays named ``pressure`` (scalars) and ``velocity``
    (vectors) are picked up when present. Any non-tet cell is rejected.
    Returns ``(VolumeMesh, NodeFields or None)``; caps are not encoded in
    the format, so the mesh has none.
    """
    tokens = Path(path).read_text().split()
    if len(tokens) < 4 or tokens[0] != "#":
        raise FormatError("not a legacy VTK file")
    upper = [t.upper() for t in tokens]
    try:
        i = upper.index("ASCII")
    except ValueError:
        raise FormatError("only ASCII legacy VTK is supported") from None
    if "UNSTRUCTURED_GRID" not in upper[i:]:
        raise FormatError("dataset is not an UNSTRUCTURED_GRID")

    def find(word, start=0):
        try:
            return upper.index(word, start)
        except ValueError:
            return -1

    k = find("POINTS")
    if k < 0:
        raise FormatError("no POINTS section")
    n_pts = int(tokens[k + 1])
    pts = np.array(tokens[k + 3 : k + 3 + 3 * n_pts], dtype=np.float64).reshape(-1, 3)

    k = find("CELLS")
    if k < 0:
        raise FormatError("no CELLS section")
    n_cells, size = int(tokens[k + 1]), int(tokens[k + 2])
    body = np.array(tokens[k + 3 : k + 3 + size], dtype=np.int64)
    if len(body) > 0 and find("OFFSETS", k) == k + 3:
        raise FormatError("VTK 5.x OFFSETS/CONNECTIVITY layout is not supported")
    cells = []
    pos = 0
    for _ in range(n_cells):
        m = int(body[pos])
        cells.append(body[pos + 1 : pos + 1 + m])
        pos += m + 1

    k = find("CELL_TYPES")
    if k < 0:
        raise FormatError("no CELL_TYPES section")
    types = np.array(tokens[k + 2 : k + 2 + n_cells], dtype=np.int64)
    bad = np.flatnonzero(types != VTK_TETRA)
    if len(bad):
        raise FormatError(f"{len(bad)} non-tetrahedral cells (VTK types {sorted(set(types[bad].tolist()))})")
    tets = np.array(cells, dtype=np.int64).reshape(-1, 4)

    pressure = velocity = None
    k = find("POINT_DATA")
    while 0 <= k < len(tokens):
        k += 1
        if k >= len(tokens):
            break
        word = upper[k]
        if word == "SCALARS":
            # SCALARS name type [ncomp] / LOOKUP_TABLE table
            name = tokens[k + 1]
            j = k + 3
            ncomp = 1
            if tokens[j].isdigit():
                ncomp = int(tokens[j])
                j += 1
            if upper[j] == "LOOKUP_TABLE":
                j += 2
            vals = np.array(tokens[j : j + n_pts * ncomp], dtype=np.float64)
            if name.lower() == "pressure":
                pressure = vals
            k = j + n_pts * ncomp - 1
        elif word == "VECTORS":
            name = tokens[k + 1]
            j = k + 3
            vals = np.array(tokens[j : j + 3 * n_pts], dtype=np.float64).reshape(-1, 3)
            if name.lower() == "velocity":
                velocity = vals
            k = j + 3 * n_pts - 1
        elif word in ("CELL_DATA", "FIELD"):
            break
    mesh = build_mesh(pts, tets)
    fields = None
    if pressure is not None or velocity is not None:
        fields = NodeFields(
            pressure if pressure is not None else np.zeros(n_pts),
            velocity if velocity is not None else np.zeros((n_pts, 3)),
            "raw",
        )
    return mesh, fields


def write_vtk_unstructured(path, mesh: VolumeMesh, fields: NodeFields | None = None) -> None:
    """Minimal legacy ASCII writer, used to produce converter inputs."""
    lines = ["# vtk DataFile Version 3.0", "flowmesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    lines.append(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}")
    lines += ["4 " + " ".join(str(int(i)) for i in t) for t in mesh.tets]
    lines.append(f"CELL_TYPES {mesh.n_tets}")
    lines += [str(VTK_TETRA)] * mesh.n_tets
    if fields is not None:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        lines.append("SCALARS pressure double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [repr(float(p)) for p in fields.pressure]
        lines.append("VECTORS velocity double")
        lines += [" ".join(repr(float(c)) for c in v) for v in fields.velocity]
    Path(path).write_text("\n".join(lines) + "\n")
