"""Tetrahedral volume mesh with derived edge, surface and cap structure.

A :class:`VolumeMesh` is immutable after construction. All derived index
arrays are computed once, in sorted (deterministic) order, and shared by
meshes created through :meth:`VolumeMesh.with_vertices`, which is how
deformed copies of a template keep the template's connectivity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (
    BadCapLabeling,
    DegenerateCell,
    IndexOutOfRange,
    NonManifoldSurface,
)

logger = logging.getLogger(__name__)

VOLUME_EPS = 1e-12
CAP_NAMES = ("inlet", "outlet_1", "outlet_2")

# local vertex pairs of the six tet edges, and the outward faces of a
# positively oriented tet (a, b, c, d)
TET_EDGE_PAIRS = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
TET_FACES = np.array([(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)])


@dataclass(frozen=True)
class CapPatch:
    """A labeled planar opening: inlet, outlet_1 or outlet_2."""

    name: str
    faces: np.ndarray

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        faces.setflags(write=False)
        object.__setattr__(self, "faces", faces)


@dataclass(frozen=True)
class ScaledLaplacian:
    """Rescaled graph Laplacian ``2 L / lambda_max - I`` as a sparse matrix."""

    matrix: sparse.csr_matrix
    normalization: str = "sym"
    lambda_max: float = 2.0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of every tet, positive for right-handed (a, b, c, d)."""
    a = vertices[tets[:, 0]]
    e1 = vertices[tets[:, 1]] - a
    e2 = vertices[tets[:, 2]] - a
    e3 = vertices[tets[:, 3]] - a
    return np.einsum("ij,ij->i", np.cross(e1, e2), e3) / 6.0


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class _Topology:
    tets: np.ndarray
    edges: np.ndarray
    tet_edges: np.ndarray
    faces: np.ndarray
    face_tets: np.ndarray
    surface_vertices: np.ndarray
    surface_edges: np.ndarray
    caps: tuple = field(default=())


def _unique_rows(keys: np.ndarray):
    """Unique rows of a small-int key matrix, with inverse and counts."""
    return np.unique(keys, axis=0, return_inverse=True, return_counts=True)


def _build_topology(n_vertices: int, tets: np.ndarray, caps) -> _Topology:
    n_tets = len(tets)

    all_edges = np.sort(tets[:, TET_EDGE_PAIRS].reshape(-1, 2), axis=1)
    edges, inv, _ = _unique_rows(all_edges)
    tet_edges = inv.reshape(n_tets, 6)

    oriented = tets[:, TET_FACES].reshape(-1, 3)
    keys = np.sort(oriented, axis=1)
    uniq, inv, counts = _unique_rows(keys)
    if np.any(counts > 2):
        raise NonManifoldSurface("a triangle is shared by more than two tets")
    boundary_ids = np.flatnonzero(counts == 1)
    # each boundary key occurs exactly once; find that occurrence
    first = np.full(len(uniq), -1, dtype=np.int64)
    order = np.arange(len(inv))[::-1]
    first[inv[order]] = order
    occ = first[boundary_ids]
    faces = oriented[occ]
    face_tets = occ // 4

    surf_edges_all = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    surface_edges, _, edge_counts = _unique_rows(surf_edges_all)
    if len(faces) == 0 or np.any(edge_counts != 2):
        raise NonManifoldSurface(
            "boundary is not a closed 2-manifold: "
            f"{int(np.sum(edge_counts != 2))} boundary edges not shared by exactly 2 triangles"
        )
    if 3 * len(faces) != 2 * len(surface_edges):
        raise NonManifoldSurface("3*T_s != 2*E_s on the boundary")

    surface_vertices = np.unique(faces)

    face_lookup = {tuple(k): i for i, k in enumerate(np.sort(faces, axis=1).tolist())}
    cap_list = []
    if caps:
        caps = list(caps)
        names = [c.name for c in caps]
        if len(caps) != 3 or sorted(names) != sorted(CAP_NAMES):
            raise BadCapLabeling(f"expected caps {CAP_NAMES}, got {names}")
        for cap in sorted(caps, key=lambda c: CAP_NAMES.index(c.name)):
            if len(cap.faces) == 0:
                raise BadCapLabeling(f"cap {cap.name!r} has no faces")
            if cap.faces.min() < 0 or cap.faces.max() >= n_vertices:
                raise IndexOutOfRange(f"cap {cap.name!r} references a missing vertex")
            ids = []
            for f in np.sort(cap.faces, axis=1).tolist():
                fid = face_lookup.get(tuple(f))
                if fid is None:
                    raise BadCapLabeling(f"cap {cap.name!r} face {f} is not a boundary face")
                ids.append(fid)
            if len(set(ids)) != len(ids):
                raise BadCapLabeling(f"cap {cap.name!r} lists a face twice")
            cap_list.append(CapPatch(cap.name, faces[np.array(ids)]))
        seen = np.concatenate([np.sort(c.faces, axis=1) for c in cap_list])
        if len(np.unique(seen, axis=0)) != len(seen):
            raise BadCapLabeling("caps overlap")

    return _Topology(
        tets=_readonly(tets),
        edges=_readonly(edges),
        tet_edges=_readonly(tet_edges),
        faces=_readonly(faces),
        face_tets=_readonly(face_tets),
        surface_vertices=_readonly(surface_vertices),
        surface_edges=_readonly(surface_edges),
        caps=tuple(cap_list),
    )


def _check_cap_orientation(vertices, caps):
    for cap in caps:
        f = cap.faces
        n = np.cross(vertices[f[:, 1]] - vertices[f[:, 0]], vertices[f[:, 2]] - vertices[f[:, 0]])
        edge_keys = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        owner = np.repeat(np.arange(len(f)), 3)
        _, inv = np.unique(edge_keys, axis=0, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        inv_s, own_s = inv[order], owner[order]
        shared = np.flatnonzero(inv_s[1:] == inv_s[:-1])
        a, b = own_s[shared], own_s[shared + 1]
        dots = np.einsum("ij,ij->i", n[a], n[b])
        if np.any(dots <= 0):
            raise BadCapLabeling(f"cap {cap.name!r} has inconsistently oriented neighbouring faces")


class VolumeMesh:
    """Validated tetrahedral mesh.

    Parameters
    ----------
    vertices : array_like, shape (N, 3)
        Vertex positions in mm.
    tets : array_like, shape (T, 4)
        Vertex indices of each tetrahedron. Negatively oriented cells are
        reordered so every signed volume is positive.
    caps : sequence of CapPatch, optional
        Either empty or exactly the three caps inlet, outlet_1, outlet_2.

    Raises
    ------
    IndexOutOfRange, DegenerateCell, NonManifoldSurface, BadCapLabeling
    """

    def __init__(self, vertices, tets, caps=(), *, volume_eps: float = VOLUME_EPS):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        if len(vertices) == 0 or len(tets) == 0:
            raise DegenerateCell("mesh needs at least one vertex and one tet")
        if not np.all(np.isfinite(vertices)):
            raise DegenerateCell("non-finite vertex coordinates")
        if tets.min() < 0 or tets.max() >= len(vertices):
            raise IndexOutOfRange("tet index outside vertex range")

        vol = signed_volumes(vertices, tets)
        flip = vol < 0
        if np.any(flip):
            tets = tets.copy()
            tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
            vol = np.abs(vol)
        bad = np.flatnonzero(vol <= volume_eps)
        if len(bad):
            raise DegenerateCell(f"{len(bad)} tets with volume <= {volume_eps} (first: {bad[0]})")

        caps = tuple(caps or ())
        topo = _build_topology(len(vertices), tets, caps)
        lengths = np.linalg.norm(vertices[topo.edges[:, 1]] - vertices[topo.edges[:, 0]], axis=1)
        if np.any(lengths == 0):
            raise DegenerateCell("zero-length edge")
        _check_cap_orientation(vertices, topo.caps)

        self._vertices = _readonly(vertices)
        self._topo = topo
        self._adjacency = None

    @classmethod
    def _from_topology(cls, vertices, topo):
        obj = cls.__new__(cls)
        obj._vertices = _readonly(np.array(vertices, dtype=np.float64).reshape(-1, 3))
        obj._topo = topo
        obj._adjacency = None
        return obj

    def with_vertices(self, vertices, *, validate: bool = False) -> "VolumeMesh":
        """Copy of this mesh with new vertex positions and identical connectivity.

        With ``validate=True`` every tet must keep a positive volume under
        the existing orientation; the connectivity is never reordered.
        """
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self._vertices.shape:
            raise IndexOutOfRange(
                f"expected {self._vertices.shape} vertex array, got {vertices.shape}"
            )
        if validate:
            if not np.all(np.isfinite(vertices)):
                raise DegenerateCell("non-finite vertex coordinates")
            vol = signed_volumes(vertices, self.tets)
            bad = np.flatnonzero(vol <= VOLUME_EPS)
            if len(bad):
                raise DegenerateCell(f"{len(bad)} tets inverted or flat (first: {bad[0]})")
        return VolumeMesh._from_topology(vertices, self._topo)

    # ------------------------------------------------------------------
    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def tets(self) -> np.ndarray:
        return self._topo.tets

    @property
    def caps(self) -> tuple:
        return self._topo.caps

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, rows sorted, lexicographic order."""
        return self._topo.edges

    @property
    def tet_edges(self) -> np.ndarray:
        """Index into :attr:`edges` of the six edges of each tet."""
        return self._topo.tet_edges

    @property
    def faces(self) -> np.ndarray:
        """Boundary triangles, oriented outward."""
        return self._topo.faces

    @property
    def surface_vertices(self) -> np.ndarray:
        return self._topo.surface_vertices

    @property
    def surface_edges(self) -> np.ndarray:
        return self._topo.surface_edges

    @property
    def n_vertices(self) -> int:
        return len(self._vertices)

    @property
    def n_tets(self) -> int:
        return len(self._topo.tets)

    def cap(self, name: str) -> CapPatch:
        for c in self.caps:
            if c.name == name:
                return c
        raise KeyError(name)

    def shares_topology(self, other: "VolumeMesh") -> bool:
        if self._topo is other._topo:
            return True
        return (
            self.n_vertices == other.n_vertices
            and np.array_equal(self.tets, other.tets)
            and len(self.caps) == len(other.caps)
            and all(
                a.name == b.name and np.array_equal(a.faces, b.faces)
                for a, b in zip(self.caps, other.caps)
            )
        )

    @property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 node adjacency over the tet edge graph (no self loops)."""
        if self._adjacency is None:
            e = self.edges
            n = self.n_vertices
            data = np.ones(2 * len(e))
            rows = np.concatenate([e[:, 0], e[:, 1]])
            cols = np.concatenate([e[:, 1], e[:, 0]])
            self._adjacency = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._adjacency

    def edge_lengths(self, surface_only: bool = False) -> np.ndarray:
        e = self.surface_edges if surface_only else self.edges
        v = self._vertices
        return np.linalg.norm(v[e[:, 1]] - v[e[:, 0]], axis=1)

    def volumes(self) -> np.ndarray:
        return signed_volumes(self._vertices, self.tets)

    def __repr__(self):
        return (
            f"VolumeMesh(n_vertices={self.n_vertices}, n_tets={self.n_tets}, "
            f"n_faces={len(self.faces)}, caps={[c.name for c in self.caps]})"
        )


def build_mesh(vertices, tets, caps=None) -> VolumeMesh:
    """Validate raw arrays and derive the mesh structure.

    ``caps`` may be a sequence of :class:`CapPatch` or a mapping
    ``name -> faces``.
    """
    if isinstance(caps, dict):
        caps = [CapPatch(name, faces) for name, faces in caps.items()]
    return VolumeMesh(vertices, tets, caps or ())


def extract_surface(mesh: VolumeMesh):
    """Boundary triangles and the sorted vertex indices they reference."""
    return mesh.faces, mesh.surface_vertices


def scaled_laplacian(mesh: VolumeMesh, lambda_max: float | str = 2.0) -> ScaledLaplacian:
    """Chebyshev-rescaled symmetric normalized Laplacian of the edge graph.

    ``L = I - D^-1/2 A D^-1/2`` and ``L~ = 2 L / lambda_max - I``. With the
    default ``lambda_max = 2`` this is ``-D^-1/2 A D^-1/2``. Pass
    ``lambda_max="exact"`` to use the largest eigenvalue of ``L`` instead.
    Rows and columns of isolated nodes are zero.
    """
    a = mesh.adjacency
    deg = np.asarray(a.sum(axis=1)).ravel()
    isolated = deg == 0
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[~isolated] = 1.0 / np.sqrt(deg[~isolated])
    d = sparse.diags(inv_sqrt)
    norm_adj = (d @ a @ d).tocsr()
    n = mesh.n_vertices

    if lambda_max == "exact":
        from scipy.sparse.linalg import eigsh

        lap = sparse.identity(n, format="csr") - norm_adj
        lam = float(eigsh(lap, k=1, which="LA", return_eigenvectors=False)[0])
    else:
        lam = float(lambda_max)

    if lam == 2.0:
        mat = -norm_adj
    else:
        keep = sparse.diags((~isolated).astype(float))
        lap = keep - norm_adj
        mat = (2.0 / lam) * lap - keep
    mat = sparse.csr_matrix(mat)
    mat.sort_indices()
    return ScaledLaplacian(matrix=mat, normalization="sym", lambda_max=lam)
