"""Exact spatial queries: nearest neighbours, point-in-tet location and
point-to-triangle distance.

The k-d tree only proposes candidates; every distance handed back to callers
is recomputed here with the same expression a brute-force scan would use, so
accelerated and exhaustive results agree bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise squared Euclidean distance, summed in fixed coordinate order."""
    d = a - b
    return (d * d).sum(axis=-1)


class NearestIndex:
    """Exact nearest-neighbour index over a fixed point set."""

    def __init__(self, points):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self._tree = cKDTree(self.points)

    def nearest(self, query):
        """Index of, and squared distance to, the nearest indexed point."""
        query = np.asarray(query, dtype=np.float64)
        _, idx = self._tree.query(query, k=1)
        idx = np.asarray(idx, dtype=np.int64)
        return idx, sq_dist(query, self.points[idx])

    def k_nearest(self, query, k: int):
        """The ``k`` nearest points of each query, ties broken by index.

        Returns index and squared-distance arrays of shape (n_query, k),
        ordered by increasing (distance, index).
        """
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        n = len(self.points)
        dist, _ = self._tree.query(query, k=k)
        dist = np.asarray(dist).reshape(len(query), k)
        out_idx = np.empty((len(query), k), dtype=np.int64)
        out_d2 = np.empty((len(query), k))
        for q in range(len(query)):
            if k == n:
                cand = np.arange(n)
            else:
                radius = dist[q, -1] * (1 + 1e-9) + 1e-300
                cand = np.asarray(self._tree.query_ball_point(query[q], radius), dtype=np.int64)
            d2 = sq_dist(query[q], self.points[cand])
            order = np.lexsort((cand, d2))[:k]
            out_idx[q] = cand[order]
            out_d2[q] = d2[order]
        return out_idx, out_d2


def brute_nearest(query, points):
    """O(n*m) nearest neighbour; lowest index wins ties."""
    query = np.asarray(query, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    d2 = sq_dist(query[:, None, :], points[None, :, :])
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(query)), idx]


# ----------------------------------------------------------------------
# point location in tetrahedra

def _expand_boxes(lo, hi):
    """All integer cells of each axis-aligned box [lo, hi] (inclusive).

    Returns (owner, cells) where ``owner[i]`` is the box id for ``cells[i]``.
    """
    ext = hi - lo + 1
    counts = np.prod(ext, axis=1)
    owner = np.repeat(np.arange(len(lo)), counts)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(counts.sum()) - np.repeat(start, counts)
    e = ext[owner]
    cz = local % e[:, 2]
    rest = local // e[:, 2]
    cy = rest % e[:, 1]
    cx = rest // e[:, 1]
    cells = lo[owner] + np.stack([cx, cy, cz], axis=1)
    return owner, cells


class TetLocator:
    """Find the tetrahedron containing each query point.

    Tets are binned into a uniform grid by bounding box. A point belongs to
    a tet when all four barycentric coordinates are >= ``-tol``; when
    several tets qualify the lowest tet index wins.
    """

    def __init__(self, vertices, tets, cell_size: float | None = None):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.tets = np.asarray(tets, dtype=np.int64)
        corners = self.vertices[self.tets]
        self._a = corners[:, 0]
        mat = np.stack([corners[:, 1] - self._a, corners[:, 2] - self._a, corners[:, 3] - self._a], axis=2)
        self._inv = np.linalg.inv(mat)

        bmin = corners.min(axis=1)
        bmax = corners.max(axis=1)
        if cell_size is None:
            cell_size = float(np.mean(np.max(bmax - bmin, axis=1)))
            if cell_size <= 0:
                cell_size = 1.0
        self.cell = cell_size
        self.origin = bmin.min(axis=0)
        lo = np.floor((bmin - self.origin) / cell_size).astype(np.int64)
        hi = np.floor((bmax - self.origin) / cell_size).astype(np.int64)
        self.shape = hi.max(axis=0) + 1
        owner, cells = _expand_boxes(lo, hi)
        key = self._key(cells)
        order = np.lexsort((owner, key))
        self._keys = key[order]
        self._owner = owner[order]

    def _key(self, cells):
        return (cells[:, 0] * self.shape[1] + cells[:, 1]) * self.shape[2] + cells[:, 2]

    def barycentric(self, tet_ids, points):
        lam = np.einsum("nij,nj->ni", self._inv[tet_ids], points - self._a[tet_ids])
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, points, tol: float = 1e-9, chunk: int = 200_000):
        """Containing tet (-1 when none) and barycentric weights per point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(points)
        tet = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 4))
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            tet[sl], bary[sl] = self._locate_chunk(points[sl], tol)
        return tet, bary

    def _locate_chunk(self, points, tol):
        n = len(points)
        tet = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 4))
        cells = np.floor((points - self.origin) / self.cell).astype(np.int64)
        inside_grid = np.all((cells >= 0) & (cells < self.shape), axis=1)
        qid = np.flatnonzero(inside_grid)
        if len(qid) == 0:
            return tet, bary
        key = self._key(cells[qid])
        start = np.searchsorted(self._keys, key, side="left")
        stop = np.searchsorted(self._keys, key, side="right")
        counts = stop - start
        owner_q = np.repeat(qid, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = self._owner[np.repeat(start, counts) + offs]
        if len(cand) == 0:
            return tet, bary
        b = self.barycentric(cand, points[owner_q])
        ok = np.all(b >= -tol, axis=1)
        owner_q, cand, b = owner_q[ok], cand[ok], b[ok]
        # candidates are grouped by query and sorted by tet id; keep the first
        first = np.ones(len(owner_q), dtype=bool)
        first[1:] = owner_q[1:] != owner_q[:-1]
        tet[owner_q[first]] = cand[first]
        bary[owner_q[first]] = b[first]
        return tet, bary


# ----------------------------------------------------------------------
# point-triangle distance

def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangles (a, b, c) to points p, row-wise.

    Region classification after Ericson, *Real-Time Collision Detection*,
    section 5.1.5, vectorized.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(p), dtype=bool), a + ab * v[:, None] + ac * w[:, None])
    return out


def point_triangle_sqdist(p, a, b, c):
    q = closest_point_on_triangles(p, a, b, c)
    return sq_dist(p, q)


class TriangleDistance:
    """Exact distance from points to a triangle surface.

    Candidate triangles are those whose centroid lies within
    ``d_vertex + r_max`` of the query, where ``d_vertex`` is the distance to
    the nearest surface vertex (an upper bound on the answer) and ``r_max``
    the largest centroid-to-corner radius. The true minimizer is always a
    candidate, so the result equals an exhaustive scan.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        tri = self.vertices[self.faces]
        self._a, self._b, self._c = tri[:, 0], tri[:, 1], tri[:, 2]
        cent = tri.mean(axis=1)
        self._r = float(np.sqrt(np.max(sq_dist(tri, cent[:, None, :]))))
        self._ctree = cKDTree(cent)
        used = np.unique(self.faces)
        self._vtree = cKDTree(self.vertices[used])

    def sqdist(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dv, _ = self._vtree.query(points, k=1)
        out = np.empty(len(points))
        for i, (p, d) in enumerate(zip(points, dv)):
            cand = np.asarray(
                self._ctree.query_ball_point(p, (d + self._r) * (1 + 1e-9) + 1e-12), dtype=np.int64
            )
            out[i] = point_triangle_sqdist(p[None, :], self._a[cand], self._b[cand], self._c[cand]).min()
        return out

    def distance(self, points):
        return np.sqrt(self.sqdist(points))
