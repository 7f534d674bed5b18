"""Forward pass: convolutional image encoder and graph deformation branches.

Node coordinates inside the network are normalized image coordinates in
``[-1, 1]`` per axis, where -1 and 1 are the centers of the first and last
voxel. Each branch adds a 7-channel delta (coordinates, pressure, velocity)
to the running node state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BadInputSize, ShapeMismatch
from ..fields import NodeFields, NormStats, normalize_fields
from ..image import ImageVolume, sample_grid
from ..mesh import ScaledLaplacian, VolumeMesh, scaled_laplacian
from .layers import cheb_conv, conv3d, instance_norm, leaky_relu, matmul, maxpool2, worker_threads
from .weights import STATE_CHANNELS, WeightSet


@dataclass(frozen=True)
class BranchOutput:
    """One branch prediction: deformed mesh, normalized fields, raw state."""

    mesh: VolumeMesh
    fields: NodeFields
    state: np.ndarray


def _check_image(image: ImageVolume, weights: WeightSet):
    arch = weights.arch
    dims = image.dims
    if image.channels != arch.in_channels:
        raise BadInputSize(f"expected {arch.in_channels} image channel(s), got {image.channels}")
    if len(set(dims)) != 1:
        raise BadInputSize(f"image must be cubic, got {dims}")
    if dims[0] % arch.size_multiple:
        raise BadInputSize(f"image side {dims[0]} is not divisible by {arch.size_multiple}")


def _residual_block(x, weights: WeightSet, prefix: str):
    arch = weights.arch
    h = x
    for k in range(1, arch.convs_per_block + 1):
        h = conv3d(h, weights[f"{prefix}.conv{k}.weight"], weights[f"{prefix}.conv{k}.bias"])
        h = instance_norm(h, weights[f"{prefix}.norm{k}.scale"], weights[f"{prefix}.norm{k}.shift"], arch.norm_eps)
        h = leaky_relu(h, arch.leaky_slope)
    # spatial dropout is the identity at inference
    if f"{prefix}.skip.weight" in weights:
        skip = conv3d(x, weights[f"{prefix}.skip.weight"], weights[f"{prefix}.skip.bias"])
    else:
        skip = x
    return h + skip


def image_encoder_forward(image: ImageVolume, weights: WeightSet) -> list:
    """Pre-pool feature grids of every encoder level, channel-last.

    Level ``l`` (1-based) has side ``S / 2**(l-1)`` and the level's channel
    count.
    """
    _check_image(image, weights)
    arch = weights.arch
    x = np.moveaxis(np.asarray(image.data, dtype=np.float64), 0, -1)
    pyramid = []
    for lvl in range(1, arch.n_levels + 1):
        for b in range(1, arch.blocks_per_level + 1):
            x = _residual_block(x, weights, f"encoder.level{lvl}.block{b}")
        pyramid.append(x)
        if lvl < arch.n_levels:
            x = maxpool2(x)
    return pyramid


def _graph_layer(lap, h, weights, name):
    return cheb_conv(lap, h, weights[f"{name}.w0"], weights[f"{name}.w1"], weights[f"{name}.bias"])


def project_level(pyramid, level: int, fine_index: np.ndarray) -> np.ndarray:
    """Trilinear features of one encoder level at level-1 voxel indices.

    Voxel ``i`` of level ``l`` covers level-1 voxels ``f*i .. f*i + f - 1``
    with ``f = 2**(l-1)``, so its center sits at level-1 index
    ``f*i + (f-1)/2``.
    """
    f = 2 ** (level - 1)
    idx = (fine_index - (f - 1) / 2.0) / f
    return sample_grid(pyramid[level - 1], idx)


def graph_branch_forward(
    state: np.ndarray,
    pyramid: list,
    weights: WeightSet,
    branch_index: int,
    lap: ScaledLaplacian,
    trace: list | None = None,
):
    """Run one deformation branch; returns ``(new_state, delta)``.

    ``state`` is ``(N, 7)``: normalized coordinates, pressure and velocity.
    When ``trace`` is a list, ``(step, shape)`` records are appended to it.
    """
    arch = weights.arch
    n_branches = len(arch.branch_widths)
    if not 1 <= branch_index <= n_branches:
        raise ValueError(f"branch_index must lie in 1..{n_branches}")
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 2 or state.shape[1] != STATE_CHANNELS:
        raise ShapeMismatch(f"node state must be (N, {STATE_CHANNELS}), got {state.shape}")
    if state.shape[0] != lap.n:
        raise ShapeMismatch(f"{state.shape[0]} nodes in state, {lap.n} in the graph")

    def log(step, arr):
        if trace is not None:
            trace.append((step, tuple(arr.shape)))

    p = f"branch{branch_index}"
    slope = arch.leaky_slope
    h = _graph_layer(lap, state, weights, f"{p}.adapt")
    log("adapt", h)

    side = np.array(pyramid[0].shape[:3], dtype=np.float64)
    fine = (state[:, :3] + 1.0) * (side - 1.0) / 2.0
    feats = [project_level(pyramid, lvl, fine) for lvl in arch.branch_levels[branch_index - 1]]
    for lvl, f in zip(arch.branch_levels[branch_index - 1], feats):
        log(f"project.level{lvl}", f)
    h = np.concatenate([h] + feats, axis=1)
    log("concat", h)

    for k in range(1, arch.graph_blocks + 1):
        x = h
        for c in range(1, arch.graph_convs_per_block + 1):
            h = _graph_layer(lap, h, weights, f"{p}.block{k}.conv{c}")
            h = instance_norm(
                h, weights[f"{p}.block{k}.norm{c}.scale"], weights[f"{p}.block{k}.norm{c}.shift"], arch.norm_eps
            )
            h = leaky_relu(h, slope)
        if f"{p}.block{k}.skip.weight" in weights:
            x = matmul(x, np.asarray(weights[f"{p}.block{k}.skip.weight"], dtype=np.float64))
            x = x + np.asarray(weights[f"{p}.block{k}.skip.bias"], dtype=np.float64)
        h = h + x
        log(f"block{k}", h)

    delta = _graph_layer(lap, h, weights, f"{p}.bottleneck")
    log("bottleneck", delta)
    return state + delta, delta


def mm_to_normalized(points_mm, image: ImageVolume) -> np.ndarray:
    side = np.array(image.dims, dtype=np.float64)
    return 2.0 * image.to_index(points_mm) / (side - 1.0) - 1.0


def _initial_fields(template: VolumeMesh, template_fields, stats):
    if template_fields is None:
        return np.zeros((template.n_vertices, 4))
    if len(template_fields) != template.n_vertices:
        raise ShapeMismatch("template fields do not match the template node count")
    if template_fields.space == "raw":
        if stats is None:
            raise ValueError("raw template fields need normalization stats")
        template_fields = normalize_fields(template_fields, stats)
    return template_fields.as_array()


def image2flow_forward(
    image: ImageVolume,
    template: VolumeMesh,
    weights: WeightSet,
    template_fields: NodeFields | None = None,
    stats: NormStats | None = None,
    threads: int | None = None,
    trace: list | None = None,
) -> list:
    """Encode the image once, then run the branches in sequence.

    Returns one :class:`BranchOutput` per branch; the last one is the final
    prediction. Output coordinates are the template's plus the accumulated
    coordinate deltas mapped back to mm, so zero deltas reproduce the
    template exactly. Fields start from the normalized template fields (or
    zeros) and are returned in normalized space. ``threads`` sets the worker
    count; the result is bitwise the same for any value.
    """
    with worker_threads(threads):
        pyramid = image_encoder_forward(image, weights)
        lap = scaled_laplacian(template)
        coords = mm_to_normalized(template.vertices, image)
        base_fields = _initial_fields(template, template_fields, stats)
        state = np.column_stack([coords, base_fields])
        to_mm = (np.array(image.dims, dtype=np.float64) - 1.0) / 2.0 * np.asarray(image.spacing)
        outputs = []
        cumulative = np.zeros_like(state)
        for b in range(1, len(weights.arch.branch_widths) + 1):
            branch_trace = [] if trace is not None else None
            state, delta = graph_branch_forward(state, pyramid, weights, b, lap, branch_trace)
            if trace is not None:
                trace.append((b, branch_trace))
            cumulative = cumulative + delta
            verts = template.vertices + cumulative[:, :3] * to_mm
            fields = NodeFields.from_array(base_fields + cumulative[:, 3:], "normalized")
            outputs.append(BranchOutput(template.with_vertices(verts, validate=False), fields, state.copy()))
    return outputs
