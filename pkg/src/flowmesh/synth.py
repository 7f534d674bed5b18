"""Analytic vessel phantoms: meshes, Poiseuille fields, images and centerlines.

Both phantom kinds are built from one structured lattice. The cross-section
is an ``n x n`` square grid mapped onto a disk, the axial direction has
``m`` layers, and every hex cell is split into five tets with alternating
parity so neighbouring cells agree on their shared face diagonals.

A bifurcation keeps the trunk lattice up to the junction layer and then
splits the square along its middle column: the left and right halves
continue as two branches, each half-rectangle blending from the trunk
half-disk into a full disk around its own tilted axis.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DegenerateCell, SelfIntersection, SpecInfeasible
from .fields import NodeFields, NormStats
from .image import ImageVolume
from .mesh import CapPatch, VolumeMesh
from .spatial import TetLocator

logger = logging.getLogger(__name__)

BLOOD_VISCOSITY = 0.04  # Pa s
BLOOD_DENSITY = 1060.0  # kg / m^3
INLET_VELOCITY = 0.2  # m / s

KINDS = ("straight", "bifurcation")


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "straight"
    radius: float = 10.0
    length: float = 80.0
    branch_angle: float = 60.0
    target_nodes: int = 2000
    inlet_velocity: float = INLET_VELOCITY
    cross_divisions: int | None = None
    axial_divisions: int | None = None
    seed: int = 0
    jitter: float = 0.0
    image_dims: int = 64
    plane_azimuth: float = 45.0
    viscosity: float = BLOOD_VISCOSITY
    density: float = BLOOD_DENSITY

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not (self.radius > 0 and self.length > 0):
            raise ValueError("radius and length must be positive")
        if self.target_nodes < 100:
            raise ValueError("target_nodes must be >= 100")
        if self.cross_divisions is not None and (self.cross_divisions < 2 or self.cross_divisions % 2):
            raise ValueError("cross_divisions must be an even number >= 2")
        if self.kind == "bifurcation" and not 0 < self.branch_angle < 150:
            raise ValueError("branch_angle must lie in (0, 150) degrees")
        if not 0 <= self.jitter < 0.25:
            raise ValueError("jitter must lie in [0, 0.25)")


@dataclass
class PhantomBundle:
    spec: PhantomSpec
    mesh: VolumeMesh
    fields: NodeFields
    image: ImageVolume | None
    centerlines: list
    stats: NormStats
    manifest: dict
    radius_scale: object = field(default=None, repr=False)


# ----------------------------------------------------------------------
# lattice geometry

def disk_map(u, v):
    """Elliptical square-to-disk map of [-1, 1]^2 onto the unit disk."""
    return u * np.sqrt(1.0 - 0.5 * v * v), v * np.sqrt(1.0 - 0.5 * u * u)


def profile_factor(u, v):
    """``1 - r^2`` of the mapped point, written so walls give exactly 0."""
    return (1.0 - u * u) * (1.0 - v * v)


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _choose_divisions(spec: PhantomSpec):
    """Cross (even) and axial division counts that land near the target count."""
    target = spec.target_nodes
    if spec.kind == "straight":
        def count(n, m):
            return (n + 1) ** 2 * (m + 1)
        axial_len = spec.length
    else:
        def count(n, m):
            mt = m // 2
            mb = m - mt
            return (n + 1) ** 2 * (mt + 1) + 2 * mb * (n // 2 + 1) * (n + 1)
        axial_len = spec.length

    if spec.cross_divisions is not None and spec.axial_divisions is not None:
        n, m = spec.cross_divisions, spec.axial_divisions
        return n, m, count(n, m)

    candidates = [spec.cross_divisions] if spec.cross_divisions else range(2, 200, 2)
    best = None
    for n in candidates:
        if spec.axial_divisions is not None:
            ms = [spec.axial_divisions]
        else:
            per_layer = count(n, 1) - count(n, 0)
            m0 = max(2, int(round((target - (n + 1) ** 2) / max(per_layer, 1))))
            ms = [mm for mm in (m0 - 1, m0, m0 + 1) if mm >= 2]
        for m in ms:
            c = count(n, m)
            err = abs(c - target) / target
            # prefer hexes whose axial and cross spacings match
            shape = abs(np.log((axial_len / m) / (2 * spec.radius / n)))
            key = (err > 0.1, shape if err <= 0.1 else err)
            if best is None or key < best[0]:
                best = (key, n, m, c)
    _, n, m, c = best
    return n, m, c


# five tets per hex; corner order (di, dj, dk) = 000, 100, 010, 110, 001,
# 101, 011, 111. Even cells use the odd-corner central tet, odd cells the
# even one, so shared face diagonals always match.
_HEX_SPLIT_EVEN = np.array([(0, 1, 2, 4), (3, 1, 2, 7), (5, 1, 4, 7), (6, 2, 4, 7), (1, 2, 4, 7)])
_HEX_SPLIT_ODD = np.array([(1, 0, 3, 5), (2, 0, 3, 6), (4, 0, 5, 6), (7, 3, 5, 6), (0, 3, 5, 6)])
_HEX_CORNERS = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)]


class _Lattice:
    """Index bookkeeping and per-vertex parameters of a phantom lattice."""

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        n, m, expected = _choose_divisions(spec)
        self.n, self.m, self.expected = n, m, expected
        if spec.kind == "straight":
            self.mt, self.mb = m, 0
            self.trunk_len = spec.length
            self.branch_len = 0.0
        else:
            self.mt = m // 2
            self.mb = m - self.mt
            self.trunk_len = spec.length / 2
            self.branch_len = spec.length / 2
        self.half = n // 2
        self.layer = (n + 1) ** 2
        self.branch_layer = (self.half + 1) * (n + 1)
        self.n_trunk = (self.mt + 1) * self.layer
        self.n_vertices = self.n_trunk + 2 * self.mb * self.branch_layer
        self.half_angle = np.deg2rad(spec.branch_angle / 2)
        self.branch_radius = spec.radius / np.sqrt(2.0)
        self.transition = 0.6 * self.branch_len
        self._params()

    def vid(self, b, i, j, k):
        i, j, k = np.asarray(i), np.asarray(j), np.asarray(k)
        trunk = k * self.layer + j * (self.n + 1) + i
        if self.mb == 0:
            return trunk
        q = k - self.mt
        ii = i - b * self.half
        branch = self.n_trunk + (b * self.mb + (q - 1)) * self.branch_layer + j * (self.half + 1) + ii
        return np.where(k <= self.mt, trunk, branch)

    def _params(self):
        n = self.n
        nv = self.n_vertices
        self.region = np.zeros(nv, dtype=np.int64)  # 0 trunk, 1 left, 2 right
        self.gi = np.zeros(nv, dtype=np.int64)
        self.gj = np.zeros(nv, dtype=np.int64)
        self.gk = np.zeros(nv, dtype=np.int64)
        k, j, i = np.meshgrid(np.arange(self.mt + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
        ids = self.vid(0, i.ravel(), j.ravel(), k.ravel())
        self.gi[ids], self.gj[ids], self.gk[ids] = i.ravel(), j.ravel(), k.ravel()
        for b in (0, 1):
            k, j, ii = np.meshgrid(
                np.arange(self.mt + 1, self.mt + self.mb + 1),
                np.arange(n + 1),
                np.arange(self.half + 1),
                indexing="ij",
            )
            gi = ii.ravel() + b * self.half
            ids = self.vid(b, gi, j.ravel(), k.ravel())
            self.region[ids] = b + 1
            self.gi[ids], self.gj[ids], self.gk[ids] = gi, j.ravel(), k.ravel()
        self.u = 2.0 * self.gi / n - 1.0
        self.v = 2.0 * self.gj / n - 1.0
        # branch-local cross coordinate, +1 / -1 on the slit side
        self.ub = np.where(
            self.region == 1,
            4.0 * self.gi / n - 1.0,
            4.0 * (self.gi - self.half) / n - 1.0,
        )
        s_trunk = self.trunk_len * self.gk / max(self.mt, 1)
        s_branch = self.branch_len * (self.gk - self.mt) / max(self.mb, 1)
        self.s_local = np.where(self.region == 0, s_trunk, s_branch)

    def tets(self):
        n = self.n
        ci, cj, ck = np.meshgrid(np.arange(n), np.arange(n), np.arange(self.mt + self.mb), indexing="ij")
        ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
        br = np.where(ck >= self.mt, (ci >= self.half).astype(np.int64), 0)
        corners = np.stack(
            [self.vid(br, ci + di, cj + dj, ck + dk) for di, dj, dk in _HEX_CORNERS], axis=1
        )
        odd = (ci + cj + ck) % 2 == 1
        cells = corners[:, _HEX_SPLIT_EVEN]
        cells[odd] = corners[odd][:, _HEX_SPLIT_ODD]
        return cells.reshape(-1, 4)

    # --------------------------------------------------------------
    def path_length(self):
        return self.trunk_len + self.branch_len

    def s_path(self):
        return np.where(self.region == 0, self.s_local, self.trunk_len + self.s_local)

    def geometry(self, rho_fn, u, v, ub, region, s_local):
        """Positions of lattice parameters before azimuth rotation (mm)."""
        spec = self.spec
        R = spec.radius
        rho = rho_fn(np.where(region == 0, s_local, self.trunk_len + s_local))
        x, y = disk_map(u, v)
        pos = np.zeros((len(u), 3))
        trunk = region == 0
        pos[trunk, 0] = R * rho[trunk] * x[trunk]
        pos[trunk, 1] = R * rho[trunk] * y[trunk]
        pos[trunk, 2] = s_local[trunk]
        if np.any(~trunk):
            br = ~trunk
            h = self.half_angle
            sgn = np.where(region[br] == 1, -1.0, 1.0)
            sp = s_local[br]
            w = smoothstep(sp / self.transition)
            rho_j = rho_fn(np.array([self.trunk_len]))[0]
            ext = np.column_stack([R * rho_j * x[br], R * rho_j * y[br], self.trunk_len + sp * np.cos(h)])
            rb = self.branch_radius * rho[br]
            xb, yb = disk_map(ub[br], v[br])
            d = np.column_stack([sgn * np.sin(h), np.zeros_like(sp), np.full_like(sp, np.cos(h))])
            e1 = np.column_stack([np.full_like(sp, np.cos(h)), np.zeros_like(sp), -sgn * np.sin(h)])
            centre = np.column_stack([sgn * self.branch_radius, np.zeros_like(sp), np.full_like(sp, self.trunk_len)])
            centre = centre + sp[:, None] * d
            bmap = centre + (rb * xb)[:, None] * e1
            bmap[:, 1] += rb * yb
            pos[br] = (1.0 - w)[:, None] * ext + w[:, None] * bmap
        return pos

    def fields(self, rho_fn, u, v, ub, region, s_local):
        """Analytic pressure (Pa) and velocity (m/s) before rotation."""
        spec = self.spec
        R_m = spec.radius * 1e-3
        vm = spec.inlet_velocity
        mu = spec.viscosity
        s_path = np.where(region == 0, s_local, self.trunk_len + s_local)
        rho = rho_fn(s_path)
        trunk = region == 0
        w = np.where(trunk, 0.0, smoothstep(s_local / self.transition)) if self.mb else np.zeros(len(u))

        f_trunk = profile_factor(u, v)
        f_branch = profile_factor(ub, v)
        f = np.where(trunk, f_trunk, (1 - w) * f_trunk + w * f_branch)
        # flux conservation with the local radius; each branch carries half
        # the flow through half the trunk area, so its mean speed matches
        vmean = vm / rho**2
        speed = 2.0 * vmean * f
        h = self.half_angle
        sgn = np.where(region == 1, -1.0, 1.0)
        d = np.column_stack([w * sgn * np.sin(h), np.zeros_like(w), (1 - w) + w * np.cos(h)])
        d /= np.linalg.norm(d, axis=1)[:, None]
        velocity = speed[:, None] * d

        pressure = np.interp(s_path, *self._pressure_curve(rho_fn))
        return pressure, velocity

    def _pressure_curve(self, rho_fn):
        spec = self.spec
        L = self.path_length()
        s = np.linspace(0.0, L, 4001)
        rho = rho_fn(s)
        grad_trunk = 8 * spec.viscosity * spec.inlet_velocity / ((spec.radius * 1e-3) ** 2 * rho**4)
        if self.mb:
            w = np.where(s <= self.trunk_len, 0.0, smoothstep((s - self.trunk_len) / self.transition))
            grad = grad_trunk * (1 + w)
        else:
            grad = grad_trunk
        grad = np.broadcast_to(grad, s.shape)
        seg = 0.5 * (grad[1:] + grad[:-1]) * np.diff(s) * 1e-3
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        return s, tail


def _rotation(azimuth_deg):
    a = np.deg2rad(azimuth_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _unit_rho(s):
    return np.ones_like(np.asarray(s, dtype=np.float64))


def _caps_from_faces(lat: _Lattice, faces):
    top = lat.mt + lat.mb
    k = lat.gk[faces]
    reg = lat.region[faces]
    inlet = np.all(k == 0, axis=1)
    at_top = np.all(k == top, axis=1)
    if lat.mb == 0:
        side = np.all(lat.gi[faces] <= lat.half, axis=1)
        out1 = at_top & side
        out2 = at_top & ~side
    else:
        out1 = at_top & np.all(reg == 1, axis=1)
        out2 = at_top & np.all(reg == 2, axis=1)
    return [
        CapPatch("inlet", faces[inlet]),
        CapPatch("outlet_1", faces[out1]),
        CapPatch("outlet_2", faces[out2]),
    ]


def _centerline_params(lat: _Lattice, branch, samples_per_layer=2):
    """Lattice parameters of centerline points for one branch (or the tube)."""
    nt = lat.mt * samples_per_layer + 1
    s_t = np.linspace(0.0, lat.trunk_len, nt)
    u = np.zeros(nt)
    ub = np.zeros(nt)
    reg = np.zeros(nt, dtype=np.int64)
    if lat.mb == 0 or branch is None:
        return u, np.zeros(nt), ub, reg, s_t
    nb = lat.mb * samples_per_layer
    s_b = np.linspace(0.0, lat.branch_len, nb + 1)[1:]
    u_b = np.full(nb, -0.5 if branch == 0 else 0.5)
    return (
        np.concatenate([u, u_b]),
        np.zeros(nt + nb),
        np.concatenate([ub, np.zeros(nb)]),
        np.concatenate([reg, np.full(nb, branch + 1)]),
        np.concatenate([s_t, s_b]),
    )


def _image(mesh: VolumeMesh, dims: int, supersample: int = 2) -> ImageVolume:
    """Lumen indicator with a partial-volume ramp about one voxel wide."""
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    centre = 0.5 * (lo + hi)
    margin = 4
    spacing = float(np.max(hi - lo)) / (dims - 2 * margin)
    origin = centre - spacing * (dims - 1) / 2.0
    locator = TetLocator(mesh.vertices, mesh.tets)
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    ax = np.arange(dims)
    acc = np.zeros((dims, dims, dims))
    for ox in offs:
        for oy in offs:
            for oz in offs:
                gx, gy, gz = np.meshgrid(ax + ox, ax + oy, ax + oz, indexing="ij")
                pts = origin + spacing * np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
                tet, _ = locator.locate(pts)
                acc += (tet >= 0).reshape(dims, dims, dims)
    acc /= supersample**3
    return ImageVolume(acc[None], (spacing,) * 3, tuple(origin))


def _build(spec: PhantomSpec, rho_fn=None, with_image: bool = True, perturbation: dict | None = None):
    rho_fn = rho_fn or _unit_rho
    lat = _Lattice(spec)
    params = (lat.u, lat.v, lat.ub, lat.region, lat.s_local)
    pos = lat.geometry(rho_fn, *params)
    rot = _rotation(spec.plane_azimuth if spec.kind == "bifurcation" else 0.0)
    if spec.jitter > 0:
        rng = np.random.default_rng(spec.seed)
        boundary = (np.abs(lat.u) == 1) | (np.abs(lat.v) == 1) | (lat.gk == 0) | (lat.gk == lat.mt + lat.mb)
        boundary |= (lat.region > 0) & (np.abs(lat.ub) == 1)
        h = min(2 * spec.radius / lat.n, spec.length / lat.m)
        jit = rng.uniform(-spec.jitter * h, spec.jitter * h, size=pos.shape)
        jit[boundary] = 0.0
        pos = pos + jit
    vertices = pos @ rot.T
    tets = lat.tets()

    try:
        bare = VolumeMesh(vertices, tets)
        mesh = VolumeMesh(vertices, tets, _caps_from_faces(lat, bare.faces))
    except DegenerateCell as exc:
        if perturbation:
            raise SelfIntersection(f"perturbed phantom has inverted cells: {exc}") from None
        raise SpecInfeasible(f"lattice produced degenerate cells: {exc}") from None

    pressure, velocity = lat.fields(rho_fn, *params)
    fields = NodeFields(pressure, velocity @ rot.T, "raw")

    centerlines = []
    from .metrics.centerline import Centerline

    labels = [(None, "other")] if lat.mb == 0 else [(0, "LPA"), (1, "RPA")]
    for branch, label in labels:
        cp = _centerline_params(lat, branch)
        pts = lat.geometry(rho_fn, *cp) @ rot.T
        centerlines.append(Centerline(pts, label))

    stats = NormStats.from_fields(
        fields, provenance=f"phantom:{spec.kind}:seed={spec.seed}", zero_std_fallback=1.0
    )
    image = _image(mesh, spec.image_dims) if with_image and spec.image_dims > 0 else None

    manifest = {
        "format_version": 1,
        "spec": asdict(spec),
        "lattice": {
            "cross_divisions": lat.n,
            "axial_divisions": lat.m,
            "trunk_layers": lat.mt,
            "branch_layers": lat.mb,
            "expected_nodes": int(lat.expected),
        },
        "counts": {
            "vertices": mesh.n_vertices,
            "tets": mesh.n_tets,
            "boundary_faces": int(len(mesh.faces)),
            "caps": {c.name: int(len(c.faces)) for c in mesh.caps},
        },
        "fluid": {
            "viscosity_pa_s": spec.viscosity,
            "density_kg_m3": spec.density,
            "inlet_velocity_m_s": spec.inlet_velocity,
            "inlet_pressure_pa": float(pressure.max()),
        },
        "perturbation": perturbation,
    }
    bundle = PhantomBundle(spec, mesh, fields, image, centerlines, stats, manifest, rho_fn)
    bundle._lattice = lat
    return bundle


def generate_phantom(spec: PhantomSpec | None = None, with_image: bool = True, **overrides) -> PhantomBundle:
    """Build a phantom bundle from a spec (or keyword overrides of the default)."""
    spec = replace(spec or PhantomSpec(), **overrides) if overrides else (spec or PhantomSpec())
    return _build(spec, with_image=with_image)


def radial_displacement(length: float, amplitude: float, seed: int):
    """Smooth three-term sinusoid of the path coordinate with peak ``-amplitude``."""
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-1.0, 1.0, size=3)
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    q = np.arange(1, 4)

    def raw(s):
        s = np.asarray(s, dtype=np.float64)
        return np.sum(coef * np.sin(np.pi * q * s[..., None] / length + phase), axis=-1)

    probe = raw(np.linspace(0.0, length, 4001))
    peak = probe[np.argmax(np.abs(probe))]
    scale = -amplitude / peak if peak != 0 else 0.0

    def delta(s):
        return scale * raw(s)

    return delta


def perturb_phantom(bundle: PhantomBundle, amplitude: float, seed: int = 0, with_image: bool | None = None):
    """Radially perturbed copy of a phantom with identical node correspondence.

    The wall moves by a smooth sinusoid of the path coordinate whose largest
    excursion is inward by ``amplitude`` mm; fields are re-evaluated for the
    new local radius.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if with_image is None:
        with_image = bundle.image is not None
    if amplitude == 0:
        out = copy.copy(bundle)
        out.manifest = dict(bundle.manifest, perturbation={"amplitude": 0.0, "seed": seed, "correspondence": "identity"})
        return out
    spec = bundle.spec
    lat = bundle._lattice
    delta = radial_displacement(lat.path_length(), amplitude, seed)
    base = bundle.radius_scale or _unit_rho

    def rho(s):
        return base(s) + delta(s) / spec.radius

    probe = rho(np.linspace(0.0, lat.path_length(), 4001))
    if np.min(probe) <= 0:
        raise SelfIntersection(f"amplitude {amplitude} mm collapses the lumen (radius {spec.radius} mm)")
    info = {"amplitude": float(amplitude), "seed": int(seed), "correspondence": "identity"}
    return _build(spec, rho, with_image, info)


def analytic_profile(bundle: PhantomBundle, branch: int | None = None, samples_per_layer: int = 8):
    """Exact pressure and speed along a phantom centerline.

    Returns ``(points, pressure, speed)`` sampled densely along the path.
    """
    lat = bundle._lattice
    cp = _centerline_params(lat, branch, samples_per_layer)
    rho = bundle.radius_scale or _unit_rho
    rot = _rotation(bundle.spec.plane_azimuth if bundle.spec.kind == "bifurcation" else 0.0)
    pts = lat.geometry(rho, *cp) @ rot.T
    p, vel = lat.fields(rho, *cp)
    return pts, p, np.linalg.norm(vel, axis=1)
