"""Mesh and field losses with analytic gradients.

All geometric losses differentiate with respect to the predicted vertex
positions only. A prediction can be passed either as a :class:`VolumeMesh`
or as a bare ``(N, 3)`` vertex array, in which case the connectivity of the
reference (template) mesh is used; the optimizer relies on the latter so no
per-iteration validation is paid.

Subgradient conventions: nearest-neighbour assignments and per-cell
longest/shortest edges are treated as locally fixed; ties go to the lowest
index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import (
    DegenerateCell,
    DegenerateFace,
    EmptyPointSet,
    FieldLengthMismatch,
    MissingCaps,
    NoEdges,
    WrongBranchCount,
)
from .mesh import VolumeMesh
from .spatial import NearestIndex


@dataclass(frozen=True)
class LossWeights:
    point: float = 1.0
    edge: float = 0.5
    aspect: float = 1.25
    cap: float = 0.005
    cfd: float = 15.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")

    @classmethod
    def from_sequence(cls, values):
        values = [float(v) for v in values]
        if len(values) != 5:
            raise ValueError("expected five weights (point, edge, aspect, cap, cfd)")
        return cls(*values)

    def as_tuple(self):
        return (self.point, self.edge, self.aspect, self.cap, self.cfd)


DEFAULT_WEIGHTS = LossWeights()

TERM_NAMES = ("point", "point_s", "edge", "edge_s", "aspect", "cap", "cfd")


@dataclass(frozen=True)
class EdgeStats:
    mean: float
    std: float

    @property
    def deviation(self) -> float:
        return self.std / self.mean


@dataclass
class LossReport:
    point: float
    point_s: float
    edge: float
    edge_s: float
    aspect: float
    cap: float
    cfd: float | None
    mesh: float
    grad_vertices: np.ndarray | None = None
    grad_fields: np.ndarray | None = None

    def terms(self) -> dict:
        return {k: getattr(self, k) for k in TERM_NAMES}

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.startswith("grad_")}
        return d


def combine_terms(terms, weights: LossWeights = DEFAULT_WEIGHTS) -> float:
    """Weighted sum ``l1 (P + P_S) + l2 (E + E_S) + l3 A + l4 Cap + l5 CFD``.

    ``terms`` is a mapping or a 7-sequence in :data:`TERM_NAMES` order; a
    missing or ``None`` CFD term contributes nothing.
    """
    if not isinstance(terms, dict):
        terms = dict(zip(TERM_NAMES, terms))
    cfd = terms.get("cfd")
    total = (
        weights.point * (terms["point"] + terms["point_s"])
        + weights.edge * (terms["edge"] + terms["edge_s"])
        + weights.aspect * terms["aspect"]
        + weights.cap * terms["cap"]
    )
    if cfd is not None:
        total += weights.cfd * cfd
    return float(total)


def _resolve(pred, reference: VolumeMesh | None):
    """(vertices, topology mesh) for a prediction given as mesh or array."""
    if isinstance(pred, VolumeMesh):
        return pred.vertices, pred
    if reference is None:
        raise TypeError("a vertex array prediction needs a reference mesh for connectivity")
    v = np.asarray(pred, dtype=np.float64)
    if v.shape != reference.vertices.shape:
        raise FieldLengthMismatch(
            f"prediction has shape {v.shape}, reference mesh has {reference.vertices.shape}"
        )
    return v, reference


# ----------------------------------------------------------------------
# point loss

def chamfer_loss(pred_points, truth_points, want_grad: bool = False):
    """Bidirectional sum of squared nearest-neighbour distances.

    Returns ``(value, grad)`` where ``grad`` has the shape of ``pred_points``
    (``None`` unless requested).
    """
    p = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(truth_points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(g) == 0:
        raise EmptyPointSet("chamfer loss needs two non-empty point sets")
    g_index = NearestIndex(g)
    p_index = NearestIndex(p)
    nn_g, d_pg = g_index.nearest(p)
    nn_p, d_gp = p_index.nearest(g)
    value = float(np.sum(d_pg) + np.sum(d_gp))
    grad = None
    if want_grad:
        grad = 2.0 * (p - g[nn_g])
        np.add.at(grad, nn_p, 2.0 * (p[nn_p] - g))
    return value, grad


# ----------------------------------------------------------------------
# edge length deviation

def edge_stats(lengths) -> EdgeStats:
    lengths = np.asarray(lengths, dtype=np.float64)
    if len(lengths) == 0:
        raise NoEdges("mesh has no edges")
    mu = float(np.mean(lengths))
    sigma = float(np.sqrt(np.mean((lengths - mu) ** 2)))
    return EdgeStats(mu, sigma)


def edge_deviation(mesh_or_vertices, reference=None, surface_only=False, want_grad=False):
    """``D = sigma / mu`` of the (surface) edge lengths, and its gradient."""
    v, topo = _resolve(mesh_or_vertices, reference)
    e = topo.surface_edges if surface_only else topo.edges
    if len(e) == 0:
        raise NoEdges("mesh has no edges")
    vec = v[e[:, 1]] - v[e[:, 0]]
    lengths = np.sqrt((vec * vec).sum(axis=1))
    st = edge_stats(lengths)
    if st.mean <= 0:
        raise DegenerateCell("all edges have zero length")
    value = st.std / st.mean
    if not want_grad:
        return value, None
    n = len(lengths)
    if st.std > 0:
        dsigma = (lengths - st.mean) / (n * st.std)
    else:
        dsigma = np.zeros(n)
    dl = dsigma / st.mean - st.std / (n * st.mean**2)
    unit = vec / lengths[:, None]
    grad = np.zeros_like(v)
    np.add.at(grad, e[:, 1], dl[:, None] * unit)
    np.add.at(grad, e[:, 0], -dl[:, None] * unit)
    return value, grad


def edge_deviation_loss(pred, template: VolumeMesh, surface_only: bool = False, want_grad: bool = False):
    """``D_edge(pred) - D_edge(template)``; may be negative."""
    dp, grad = edge_deviation(pred, template, surface_only, want_grad)
    dt, _ = edge_deviation(template, None, surface_only, False)
    return dp - dt, grad


# ----------------------------------------------------------------------
# aspect ratio

def aspect_ratio(mesh_or_vertices, reference=None, want_grad=False):
    """Mean over cells of longest / shortest edge, and its gradient."""
    v, topo = _resolve(mesh_or_vertices, reference)
    e = topo.edges
    vec = v[e[:, 1]] - v[e[:, 0]]
    lengths = np.sqrt((vec * vec).sum(axis=1))
    cell_len = lengths[topo.tet_edges]
    imax = np.argmax(cell_len, axis=1)
    imin = np.argmin(cell_len, axis=1)
    rows = np.arange(len(cell_len))
    lmax = cell_len[rows, imax]
    lmin = cell_len[rows, imin]
    if np.any(lmin <= 0):
        raise DegenerateCell("cell with a zero-length edge")
    ratio = lmax / lmin
    value = float(np.mean(ratio))
    if not want_grad:
        return value, None
    n = len(ratio)
    emax = topo.tet_edges[rows, imax]
    emin = topo.tet_edges[rows, imin]
    dl = np.zeros(len(e))
    np.add.at(dl, emax, 1.0 / (lmin * n))
    np.add.at(dl, emin, -lmax / (lmin**2 * n))
    unit = vec / lengths[:, None]
    grad = np.zeros_like(v)
    np.add.at(grad, e[:, 1], dl[:, None] * unit)
    np.add.at(grad, e[:, 0], -dl[:, None] * unit)
    return value, grad


def aspect_ratio_loss(pred, template: VolumeMesh, want_grad: bool = False):
    ap, grad = aspect_ratio(pred, template, want_grad)
    at, _ = aspect_ratio(template)
    return ap - at, grad


# ----------------------------------------------------------------------
# cap coplanarity

def cap_coplanar_loss(pred, reference: VolumeMesh | None = None, want_grad: bool = False):
    """Sum over caps of squared deviation of unit face normals from their mean."""
    v, topo = _resolve(pred, reference)
    if len(topo.caps) != 3:
        raise MissingCaps("cap coplanar loss needs the three labeled caps")
    value = 0.0
    grad = np.zeros_like(v) if want_grad else None
    for cap in topo.caps:
        f = cap.faces
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        e1, e2 = b - a, c - a
        cr = np.cross(e1, e2)
        norm = np.sqrt((cr * cr).sum(axis=1))
        if np.any(norm <= 0):
            raise DegenerateFace(f"zero-area face in cap {cap.name!r}")
        n = cr / norm[:, None]
        dev = n - n.mean(axis=0)
        value += float(np.sum(dev * dev))
        if want_grad:
            # d/dn_k of the cap sum is 2 (n_k - mean): the mean's own
            # dependence cancels because deviations sum to zero
            gn = 2.0 * dev
            gc = (gn - n * np.einsum("ij,ij->i", n, gn)[:, None]) / norm[:, None]
            gb = np.cross(e2, gc)
            gcc = np.cross(gc, e1)
            np.add.at(grad, f[:, 1], gb)
            np.add.at(grad, f[:, 2], gcc)
            np.add.at(grad, f[:, 0], -(gb + gcc))
    return value, grad


# ----------------------------------------------------------------------
# CFD loss

def _field_array(fields_or_array):
    if hasattr(fields_or_array, "as_array"):
        return fields_or_array.as_array()
    return np.asarray(fields_or_array, dtype=np.float64)


def cfd_loss(pred_fields, truth_fields, want_grad: bool = False, pooling: str = "mean"):
    """Mean absolute error over all nodes and the four field channels.

    ``pooling="mean"`` averages over N x 4 entries; ``"channel_sum"`` sums
    the four per-channel means instead.
    """
    p = _field_array(pred_fields)
    g = _field_array(truth_fields)
    if p.shape != g.shape:
        raise FieldLengthMismatch(f"field shapes differ: {p.shape} vs {g.shape}")
    if p.ndim != 2 or p.shape[0] == 0:
        raise FieldLengthMismatch("fields must be a non-empty (N, channels) array")
    diff = p - g
    n = p.shape[0]
    if pooling == "mean":
        scale = 1.0 / p.size
    elif pooling == "channel_sum":
        scale = 1.0 / n
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    value = float(np.sum(np.abs(diff)) * scale)
    grad = np.sign(diff) * scale if want_grad else None
    return value, grad


# ----------------------------------------------------------------------
# combinations

def mesh_loss(
    pred,
    truth: VolumeMesh,
    template: VolumeMesh,
    weights: LossWeights = DEFAULT_WEIGHTS,
    want_grad: bool = False,
    pred_fields=None,
    truth_fields=None,
    cfd_pooling: str = "mean",
) -> LossReport:
    """All terms and their weighted total for one predicted mesh.

    ``pred`` shares the template's connectivity. The CFD term is evaluated
    only when both field sets are given; otherwise it is reported as
    ``None`` and left out of the total. Terms whose weight is zero are still
    reported but their gradients are skipped.
    """
    pv, topo = _resolve(pred, template)
    tv = truth.vertices
    w = weights
    g = w.point > 0 and want_grad

    point, gp = chamfer_loss(pv, tv, g)
    point_s, gps = chamfer_loss(pv[topo.surface_vertices], tv[truth.surface_vertices], g)
    g = w.edge > 0 and want_grad
    edge, ge = edge_deviation_loss(pv, topo, False, g)
    edge_s, ges = edge_deviation_loss(pv, topo, True, g)
    g = w.aspect > 0 and want_grad
    aspect, ga = aspect_ratio_loss(pv, topo, g)
    if topo.caps:
        cap, gc = cap_coplanar_loss(pv, topo, w.cap > 0 and want_grad)
    else:
        cap, gc = 0.0, None

    cfd, gf = None, None
    if pred_fields is not None and truth_fields is not None:
        cfd, gf = cfd_loss(pred_fields, truth_fields, want_grad and w.cfd > 0, cfd_pooling)

    terms = dict(point=point, point_s=point_s, edge=edge, edge_s=edge_s, aspect=aspect, cap=cap, cfd=cfd)
    report = LossReport(**terms, mesh=combine_terms(terms, w))

    if want_grad:
        grad = np.zeros_like(pv)
        if gp is not None:
            grad += w.point * gp
            np.add.at(grad, topo.surface_vertices, w.point * gps)
        if ge is not None:
            grad += w.edge * (ge + ges)
        if ga is not None:
            grad += w.aspect * ga
        if gc is not None:
            grad += w.cap * gc
        report.grad_vertices = grad
        if pred_fields is not None and truth_fields is not None:
            report.grad_fields = w.cfd * gf if gf is not None else np.zeros_like(_field_array(pred_fields))
    return report


def total_loss(branch_reports) -> float:
    """Sum of the per-branch mesh losses over exactly three branches."""
    reports = list(branch_reports)
    if len(reports) != 3:
        raise WrongBranchCount(f"expected 3 branch reports, got {len(reports)}")
    return float(sum(r.mesh if isinstance(r, LossReport) else float(r) for r in reports))
