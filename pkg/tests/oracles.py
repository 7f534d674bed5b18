"""Independent reference implementations used only by the tests.

Each oracle takes a different route from the library code: exhaustive
scans, explicit loops and dense linear algebra.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def chamfer_brute(p, g):
    """O(n*m) bidirectional sum of squared nearest distances."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d = ((p[:, None, :] - g[None, :, :]) ** 2).sum(axis=-1)
    return float(d.min(axis=1).sum() + d.min(axis=0).sum())


def frechet_couplings(a, b):
    """Minimum over every monotone coupling of the largest coupled distance.

    Couplings are enumerated as lattice paths from (0, 0) to (n-1, m-1)
    using steps (1, 0), (0, 1) and (1, 1).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    paths = []

    def collect(i, j, path):
        path = path + [(i, j)]
        if i == n - 1 and j == m - 1:
            paths.append(path)
            return
        if i + 1 < n:
            collect(i + 1, j, path)
        if j + 1 < m:
            collect(i, j + 1, path)
        if i + 1 < n and j + 1 < m:
            collect(i + 1, j + 1, path)

    collect(0, 0, [])
    return float(min(max(d[i, j] for i, j in p) for p in paths))


def point_in_tet_all(vertices, tets, points, tol=1e-9):
    """Lowest-index tet containing each point by solving every tet, or -1."""
    vertices = np.asarray(vertices, dtype=np.float64)
    out = np.full(len(points), -1, dtype=np.int64)
    for t, cell in enumerate(tets):
        a, b, c, d = vertices[cell]
        m = np.column_stack([b - a, c - a, d - a])
        lam = np.linalg.solve(m, (np.asarray(points) - a).T).T
        bary = np.column_stack([1 - lam.sum(axis=1), lam])
        inside = np.all(bary >= -tol, axis=1) & (out < 0)
        out[inside] = t
    return out


def _segment_sqdist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    q = a + t * ab
    return float(np.dot(p - q, p - q))


def point_triangle_sqdist_projection(p, a, b, c):
    """Squared distance via plane projection, falling back to the three edges."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    h = np.dot(p - a, n)
    q = p - h * n
    # inside test with signed areas of the projected point
    c1 = np.dot(np.cross(b - a, q - a), n)
    c2 = np.dot(np.cross(c - b, q - b), n)
    c3 = np.dot(np.cross(a - c, q - c), n)
    if (c1 >= 0 and c2 >= 0 and c3 >= 0) or (c1 <= 0 and c2 <= 0 and c3 <= 0):
        return float(h * h)
    return min(_segment_sqdist(p, a, b), _segment_sqdist(p, b, c), _segment_sqdist(p, c, a))


def surface_distance_scan(points, vertices, faces):
    """Exhaustive point-to-surface distance over every triangle."""
    v = np.asarray(vertices, dtype=np.float64)
    out = []
    for p in np.asarray(points, dtype=np.float64):
        out.append(min(point_triangle_sqdist_projection(p, *v[f]) for f in faces))
    return np.sqrt(np.array(out))


def wilcoxon_enumeration(a, b):
    """Exact two-sided p by listing all 2^n sign vectors (rational arithmetic)."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    mags = np.abs(d)
    # average ranks computed directly from pairwise comparisons
    ranks = [Fraction(int(np.sum(mags < x)) + 1 + int(np.sum(mags <= x)), 2) for x in mags]
    total = sum(ranks)
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    w = min(w_plus, total - w_plus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        wp = sum(r for r, s in zip(ranks, signs) if s)
        if min(wp, total - wp) <= w:
            hits += 1
    return float(w), hits / 2**n


def dense_scaled_laplacian(n, tets):
    """-D^-1/2 A D^-1/2 from a dense adjacency built edge by edge."""
    a = np.zeros((n, n))
    for t in tets:
        for i in range(4):
            for j in range(i + 1, 4):
                a[t[i], t[j]] = a[t[j], t[i]] = 1.0
    deg = a.sum(axis=1)
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return -(inv[:, None] * a * inv[None, :])


def conv3d_loops(x, w, b):
    """Direct same-padded correlation with explicit tap loops (channel-last x)."""
    X, Y, Z, cin = x.shape
    cout, _, k, _, _ = w.shape
    r = k // 2
    xp = np.zeros((X + 2 * r, Y + 2 * r, Z + 2 * r, cin))
    xp[r : r + X, r : r + Y, r : r + Z] = x
    out = np.zeros((X, Y, Z, cout))
    for o in range(cout):
        acc = np.full((X, Y, Z), float(b[o]))
        for i in range(cin):
            for a in range(k):
                for bb in range(k):
                    for c in range(k):
                        acc += w[o, i, a, bb, c] * xp[a : a + X, bb : bb + Y, c : c + Z, i]
        out[..., o] = acc
    return out


def aspect_ratio_loops(vertices, tets):
    vals = []
    for t in tets:
        ls = [np.linalg.norm(vertices[t[i]] - vertices[t[j]]) for i in range(4) for j in range(i + 1, 4)]
        vals.append(max(ls) / min(ls))
    return float(np.mean(vals))


def edge_census(tets):
    """Unique undirected edges and boundary faces by counting incidences."""
    edges = set()
    faces = {}
    for t in tets:
        t = [int(x) for x in t]
        for i in range(4):
            for j in range(i + 1, 4):
                edges.add(tuple(sorted((t[i], t[j]))))
        for f in itertools.combinations(t, 3):
            key = tuple(sorted(f))
            faces[key] = faces.get(key, 0) + 1
    boundary = {f for f, c in faces.items() if c == 1}
    return edges, boundary

