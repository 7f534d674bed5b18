"""Finite-difference gradient checking on seeded perturbed phantoms.

A configuration is a point ``x`` plus a unit direction ``d``. Vertices (or
field entries) within ``TIE_MARGIN`` of a nearest-neighbour, longest-edge or
shortest-edge tie, or of an absolute-value kink, are frozen in ``d``. The
stencil moves nothing by more than ``2 h``, far below the margin, so every
locally fixed choice stays fixed across it.
"""

from __future__ import annotations

import numpy as np

from flowmesh.losses import (
    DEFAULT_WEIGHTS,
    aspect_ratio_loss,
    cap_coplanar_loss,
    cfd_loss,
    chamfer_loss,
    edge_deviation_loss,
    mesh_loss,
)
from flowmesh.synth import generate_phantom, perturb_phantom

LOSS_NAMES = ("point", "point_s", "edge", "edge_s", "aspect", "cap", "cfd", "mesh")
STEP_POSITION = 1e-4
STEP_FIELD = 1e-5
TIE_MARGIN = 1e-3
REL_TOL = 1e-3


def central_difference(val, h):
    """Fourth-order central difference of a scalar function of t at t = 0."""
    return (8.0 * (val(h) - val(-h)) - (val(2 * h) - val(-2 * h))) / (12.0 * h)


def make_case(seed: int):
    """Template, truth mesh, noisy prediction and random field sets for one seed."""
    rng = np.random.default_rng(seed)
    kind = ("straight", "bifurcation")[seed % 2]
    template = generate_phantom(
        kind=kind, target_nodes=int(rng.integers(140, 320)), jitter=0.1, seed=seed, with_image=False
    )
    truth = perturb_phantom(template, amplitude=1.0, seed=seed, with_image=False)
    x = template.mesh.vertices + rng.normal(scale=0.2, size=template.mesh.vertices.shape)
    n = template.mesh.n_vertices
    return template.mesh, truth.mesh, x, rng.normal(size=(n, 4)), rng.normal(size=(n, 4))


def _two_nearest(a, b):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    order = np.argsort(d, axis=1)[:, :2]
    rows = np.arange(len(a))
    return order, d[rows, order[:, 0]], d[rows, order[:, 1]]


def chamfer_tie_vertices(p_ids, p, g):
    """Indices (into the full vertex array) of predictions near a chamfer tie."""
    frozen = set()
    if len(g) > 1:
        _, d1, d2 = _two_nearest(p, g)
        frozen.update(p_ids[d2 - d1 < TIE_MARGIN].tolist())
    if len(p) > 1:
        order, d1, d2 = _two_nearest(g, p)
        near = d2 - d1 < TIE_MARGIN
        frozen.update(p_ids[order[near].ravel()].tolist())
    return frozen


def aspect_tie_vertices(mesh, x):
    e = mesh.edges
    lengths = np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1)
    cl = np.sort(lengths[mesh.tet_edges], axis=1)
    near = (cl[:, -1] - cl[:, -2] < TIE_MARGIN) | (cl[:, 1] - cl[:, 0] < TIE_MARGIN)
    return set(mesh.tets[near].ravel().tolist())


def frozen_vertices(name, mesh, truth, x):
    frozen = set()
    if name in ("point", "mesh"):
        frozen |= chamfer_tie_vertices(np.arange(len(x)), x, truth.vertices)
    if name in ("point_s", "mesh"):
        sv = mesh.surface_vertices
        frozen |= chamfer_tie_vertices(sv, x[sv], truth.vertices[truth.surface_vertices])
    if name in ("aspect", "mesh"):
        frozen |= aspect_tie_vertices(mesh, x)
    return np.array(sorted(frozen), dtype=np.int64)


def loss_fn(name, mesh, truth, tf):
    """``f(x, want_grad) -> (value, grad)``; x is the vertices (fields for cfd)."""
    if name == "point":
        return lambda x, g=False: chamfer_loss(x, truth.vertices, g)
    if name == "point_s":
        sv, tv = mesh.surface_vertices, truth.vertices[truth.surface_vertices]

        def f(x, g=False):
            val, gs = chamfer_loss(x[sv], tv, g)
            if gs is None:
                return val, None
            full = np.zeros_like(x)
            full[sv] = gs
            return val, full

        return f
    if name == "edge":
        return lambda x, g=False: edge_deviation_loss(x, mesh, False, g)
    if name == "edge_s":
        return lambda x, g=False: edge_deviation_loss(x, mesh, True, g)
    if name == "aspect":
        return lambda x, g=False: aspect_ratio_loss(x, mesh, g)
    if name == "cap":
        return lambda x, g=False: cap_coplanar_loss(x, mesh, g)
    if name == "cfd":
        return lambda f, g=False: cfd_loss(f, tf, g)
    raise KeyError(name)


def check_case(name, seed):
    """Relative error of the directional derivative for one seeded case.

    Returns ``None`` when the tie exclusion leaves nothing to move.
    """
    mesh, truth, x, pf, tf = make_case(seed)
    rng = np.random.default_rng(10_000 + seed)
    dx = rng.normal(size=x.shape)
    df = rng.normal(size=pf.shape)
    dx[frozen_vertices(name, mesh, truth, x)] = 0.0
    df[np.abs(pf - tf) < TIE_MARGIN] = 0.0

    if name == "mesh":
        # one stencil parameter t moves positions by t*h_p*dx and fields by t*h_f*df
        norm = np.sqrt(np.sum(dx * dx) + np.sum(df * df))
        if norm == 0:
            return None
        dx, df = dx / norm, df / norm
        rep = mesh_loss(x, truth, mesh, DEFAULT_WEIGHTS, True, pf, tf)
        ratio = STEP_FIELD / STEP_POSITION
        analytic = np.sum(rep.grad_vertices * dx) + ratio * np.sum(rep.grad_fields * df)

        def val(t):
            return mesh_loss(x + t * dx, truth, mesh, DEFAULT_WEIGHTS, False, pf + ratio * t * df, tf).mesh

        fd = central_difference(val, STEP_POSITION)
    else:
        base, d, h = (pf, df, STEP_FIELD) if name == "cfd" else (x, dx, STEP_POSITION)
        norm = np.linalg.norm(d)
        if norm == 0:
            return None
        d = d / norm
        f = loss_fn(name, mesh, truth, tf)
        analytic = float(np.sum(f(base, True)[1] * d))
        fd = central_difference(lambda t: f(base + t * d)[0], h)
    scale = max(abs(analytic), abs(fd), 1e-12)
    return abs(fd - analytic) / scale
