"""Direct template deformation by adaptive-moment descent, and mesh averaging."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CorrespondenceMismatch, NonFiniteLoss
from .fields import NodeFields, NormStats, normalize_fields
from .losses import DEFAULT_WEIGHTS, TERM_NAMES, LossWeights, mesh_loss
from .mesh import VolumeMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 2000
    step_size: float = 0.05
    beta_momentum: float = 0.9
    beta_variance: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-6
    window: int = 50
    weights: LossWeights = DEFAULT_WEIGHTS
    seed: int = 0
    field_step: float | None = None
    cfd_pooling: str = "mean"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_size >= 0:
            raise ValueError("step_size must be >= 0")
        for name in ("beta_momentum", "beta_variance"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class FitTrace:
    """Per-iteration loss terms plus the run summary."""

    records: list = field(default_factory=list)
    wall_time: float = 0.0
    reason: str = ""
    best_iteration: int = -1
    used_fields: bool = False

    @property
    def best_losses(self) -> np.ndarray:
        return np.array([r["best"] for r in self.records])

    @property
    def final_loss(self) -> float:
        return self.records[self.best_iteration]["total"]

    def to_csv(self) -> str:
        """CSV text with one row per iteration. Wall time is left out so
        repeated runs give identical files."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", *TERM_NAMES, "total", "best"])
        for r in self.records:
            row = [r["iteration"]]
            for k in TERM_NAMES:
                row.append("" if r[k] is None else repr(float(r[k])))
            row += [repr(float(r["total"])), repr(float(r["best"]))]
            writer.writerow(row)
        return buf.getvalue()


class _Adam:
    def __init__(self, shape, cfg: FitConfig, step: float):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.cfg = cfg
        self.step = step

    def update(self, x, g):
        c = self.cfg
        self.t += 1
        self.m = c.beta_momentum * self.m + (1 - c.beta_momentum) * g
        self.v = c.beta_variance * self.v + (1 - c.beta_variance) * g * g
        mhat = self.m / (1 - c.beta_momentum**self.t)
        vhat = self.v / (1 - c.beta_variance**self.t)
        return x - self.step * mhat / (np.sqrt(vhat) + c.eps)


def centroid_align(template: VolumeMesh, target: VolumeMesh) -> np.ndarray:
    """Template vertices translated so both vertex centroids coincide."""
    shift = target.vertices.mean(axis=0) - template.vertices.mean(axis=0)
    return template.vertices + shift


def _target_fields(template, target, target_fields, template_fields, stats):
    """Normalized (pred0, truth) field arrays, or ``(None, None)``."""
    if target_fields is None:
        return None, None
    if len(target_fields) != template.n_vertices:
        logger.info("target fields do not correspond to template nodes; CFD term disabled")
        return None, None

    def norm(f):
        if f.space == "normalized":
            return f.as_array()
        if stats is None:
            raise ValueError("raw fields need normalization stats for the CFD term")
        return normalize_fields(f, stats).as_array()

    truth = norm(target_fields)
    pred0 = norm(template_fields) if template_fields is not None else np.zeros_like(truth)
    return pred0, truth


def fit_template(
    template: VolumeMesh,
    target: VolumeMesh,
    config: FitConfig = FitConfig(),
    target_fields: NodeFields | None = None,
    template_fields: NodeFields | None = None,
    stats: NormStats | None = None,
    callback=None,
):
    """Deform ``template`` onto ``target`` keeping the template connectivity.

    Vertices start from the centroid-aligned template and follow Adam steps
    on the weighted mesh loss. Node fields are optimized jointly under the
    CFD term only when ``target_fields`` has one value per template node;
    otherwise the CFD weight is effectively zero. The best iterate found is
    returned.

    Returns
    -------
    (VolumeMesh, FitTrace) or (VolumeMesh, FitTrace, NodeFields)
        The fitted fields (normalized space) are returned as a third item
        when the CFD term was active.
    """
    if template.n_vertices == 0 or not template.caps:
        raise ValueError("template must be a valid mesh with caps")
    cfg = config
    start = time.perf_counter()
    x = centroid_align(template, target)
    fx, truth_f = _target_fields(template, target, target_fields, template_fields, stats)
    use_fields = fx is not None
    opt = _Adam(x.shape, cfg, cfg.step_size)
    fopt = _Adam(fx.shape, cfg, cfg.field_step if cfg.field_step is not None else cfg.step_size) if use_fields else None

    trace = FitTrace(used_fields=use_fields)
    best = math.inf
    best_x, best_f = x.copy(), (fx.copy() if use_fields else None)
    history = []
    reason = "max_iters"
    for it in range(cfg.max_iters):
        rep = mesh_loss(
            x, target, template, cfg.weights, want_grad=True,
            pred_fields=fx, truth_fields=truth_f, cfd_pooling=cfg.cfd_pooling,
        )
        total = rep.mesh
        if not math.isfinite(total) or not np.all(np.isfinite(rep.grad_vertices)):
            raise NonFiniteLoss(f"loss became non-finite at iteration {it}")
        if total < best:
            best = total
            best_x = x.copy()
            best_f = fx.copy() if use_fields else None
            trace.best_iteration = it
        trace.records.append({"iteration": it, **rep.terms(), "total": total, "best": best})
        if callback is not None:
            callback(it, rep)
        history.append(total)
        w = cfg.window
        if len(history) >= 2 * w:
            recent = math.fsum(history[-w:]) / w
            previous = math.fsum(history[-2 * w : -w]) / w
            if abs(recent - previous) <= cfg.tol * abs(previous):
                reason = "converged"
                break
        x = opt.update(x, rep.grad_vertices)
        if use_fields:
            fx = fopt.update(fx, rep.grad_fields)

    trace.reason = reason
    trace.wall_time = time.perf_counter() - start
    fitted = template.with_vertices(best_x, validate=False)
    if use_fields:
        return fitted, trace, NodeFields.from_array(best_f, "normalized")
    return fitted, trace


def average_correspondent_meshes(meshes) -> VolumeMesh:
    """Node-wise mean of point-correspondent meshes, validated.

    The result keeps the first mesh's connectivity and caps. Averaging can
    legitimately produce inverted cells; that surfaces as
    :class:`~flowmesh.errors.DegenerateCell`.
    """
    meshes = list(meshes)
    if not meshes:
        raise CorrespondenceMismatch("no meshes to average")
    ref = meshes[0]
    for m in meshes[1:]:
        if not ref.shares_topology(m):
            raise CorrespondenceMismatch("meshes differ in node count, cells or caps")
    acc = np.zeros_like(ref.vertices)
    for m in meshes:
        acc += m.vertices
    return ref.with_vertices(acc / len(meshes), validate=True)
