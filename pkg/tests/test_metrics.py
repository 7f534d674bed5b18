import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from flowmesh.errors import (
    DegeneratePolyline,
    EmptyCurve,
    FieldLengthMismatch,
    GridMismatch,
    KTooLarge,
    LengthMismatch,
    TooFewSamples,
    ZeroRange,
)
from flowmesh.fields import NodeFields
from flowmesh.metrics import (
    Centerline,
    GridSpec,
    MetricsReport,
    VoxelMask,
    bland_altman,
    centerline_profile,
    dice,
    frechet,
    node_errors,
    population_node_errors,
    resample_centerline,
    surface_distances,
    voxelize,
    wilcoxon_signed_rank,
)
from flowmesh.synth import perturb_phantom

GRID = GridSpec((4, 4, 4), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))


def _fields(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return NodeFields(arr[:, 0], arr[:, 1:4])


masks = st.lists(st.booleans(), min_size=64, max_size=64)


@settings(max_examples=50, deadline=None)
@given(masks, masks)
def test_dice_symmetric_and_bounded(a, b):
    ma, mb = VoxelMask(GRID, a), VoxelMask(GRID, b)
    d = dice(ma, mb)
    assert d == dice(mb, ma)
    assert 0.0 <= d <= 1.0
    assert dice(ma, ma) == 1.0


def test_dice_values_and_grid_check():
    a = np.zeros(64, bool)
    b = np.zeros(64, bool)
    a[:4] = True
    b[2:8] = True
    assert dice(VoxelMask(GRID, a), VoxelMask(GRID, b)) == 2 * 2 / 10
    assert dice(VoxelMask(GRID, b * False), VoxelMask(GRID, b * False)) == 1.0
    other = GridSpec((4, 4, 4), 1.0, (0.5, 0.0, 0.0))
    with pytest.raises(GridMismatch):
        dice(VoxelMask(GRID, a), VoxelMask(other, a))


def test_voxelize_unit_cube(unit_cube):
    grid = GridSpec((3, 3, 3), 0.5, (0.0, 0.0, 0.0))
    # every center of this grid lies in the closed cube
    assert voxelize(unit_cube, grid).count == 27
    outside = GridSpec((2, 2, 2), 0.5, (1.25, 0.0, 0.0))
    assert voxelize(unit_cube, outside).count == 0


def test_segmentation_relations(bifurcation):
    m = bifurcation.mesh
    other = perturb_phantom(bifurcation, 1.0, seed=3, with_image=False).mesh
    same = surface_distances(m, m)
    assert same["assd"] == 0.0 and same["hd"] == 0.0
    sd = surface_distances(m, other)
    assert 0 < sd["assd"] <= sd["hd"]
    assert sd["hd"] == pytest.approx(surface_distances(other, m)["hd"], rel=1e-12)
    assert surface_distances(m, other, hd_percentile=95)["hd"] <= sd["hd"]
    grid = GridSpec.covering(np.vstack([m.vertices, other.vertices]), 1.0)
    d = dice(voxelize(m, grid), voxelize(other, grid))
    assert 0.5 < d < 1.0


def test_surface_distance_of_translated_cube(unit_cube):
    shifted = unit_cube.with_vertices(unit_cube.vertices + [0.0, 0.0, 0.25])
    sd = surface_distances(unit_cube, shifted)
    assert sd["hd"] == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_frechet_matches_couplings(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
    v = frechet(a, b)
    assert v == oracles.frechet_couplings(a, b)
    assert v == frechet(b, a)
    ends = max(np.sqrt(np.sum((a[0] - b[0]) ** 2)), np.sqrt(np.sum((a[-1] - b[-1]) ** 2)))
    assert v >= ends


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_frechet_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=(int(rng.integers(2, 12)), 2)) for _ in range(3))
    assert frechet(a, c) <= frechet(a, b) + frechet(b, c) + 1e-12


def test_frechet_1d_and_normalization():
    a = np.array([0.0, 1.0, 2.0])
    assert frechet(a, a + 0.5) == 0.5
    assert frechet(a, a + 0.5, normalize_range=2.0) == 25.0
    with pytest.raises(ZeroRange):
        frechet(a, a, normalize_range=0.0)
    with pytest.raises(EmptyCurve):
        frechet([], a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 200))
def test_resample_keeps_arc_length(seed, n):
    rng = np.random.default_rng(seed)
    poly = np.cumsum(rng.uniform(0.1, 1.0, size=(8, 3)), axis=0)
    c = resample_centerline(poly, n, "LPA")
    assert len(c.points) == n and c.label == "LPA"
    assert np.array_equal(c.points[0], poly[0]) and np.array_equal(c.points[-1], poly[-1])
    total = np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1))
    spacing = np.diff(c.arc_length)
    # points sit on the polyline at equal arc length, so chords never exceed it
    assert np.all(spacing <= total / (n - 1) + 1e-9)
    assert c.arc_length[-1] <= total + 1e-9
    straight = resample_centerline([[0, 0, 0], [0, 0, 3.0]], n)
    assert straight.arc_length[-1] == pytest.approx(3.0, abs=1e-9)


def test_centerline_validation():
    with pytest.raises(DegeneratePolyline):
        Centerline([[0, 0, 0]])
    with pytest.raises(DegeneratePolyline):
        Centerline([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(ValueError):
        Centerline([[0, 0, 0], [1, 0, 0]], label="aorta")
    with pytest.raises(DegeneratePolyline):
        resample_centerline([[1, 1, 1], [1, 1, 1]], 10)


def test_centerline_profile(straight):
    m, f = straight.mesh, straight.fields
    c = resample_centerline(straight.centerlines[0], 30)
    prof = centerline_profile(m, f, c, k=5)
    assert prof["s"][0] == 0.0 and prof["s"][-1] == 1.0
    assert prof["pressure"].shape == (30,)
    # pressure falls along the flow direction
    assert prof["pressure"][0] > prof["pressure"][-1]
    with pytest.raises(KTooLarge):
        centerline_profile(m, f, c, k=m.n_vertices + 1)


def test_node_errors():
    truth = _fields([[0.0, 0, 0, 0], [10.0, 1, 2, 2]])
    pred = _fields([[1.0, 0, 0, 0], [10.0, 1, 2, 0]])
    out = node_errors(pred, truth)
    assert out["nae"][:, 0].tolist() == [10.0, 0.0]
    assert out["nae"][:, 3].tolist() == [0.0, 100.0]
    assert out["mnae_s"][0] == 5.0
    assert out["rmse"][0] == pytest.approx(np.sqrt(0.5))
    const = _fields([[1.0, 0, 0, 0], [2.0, 0, 0, 0]])
    with pytest.raises(ZeroRange):
        node_errors(const, const)
    skipped = node_errors(const, const, skip_constant=True)
    assert np.isnan(skipped["nae"][:, 1:]).all() and not np.isnan(skipped["nae"][:, 0]).any()
    with pytest.raises(FieldLengthMismatch):
        node_errors(_fields([[0.0, 0, 0, 0]]), truth)


def test_population_node_errors():
    a, b = np.ones((3, 5)), 3 * np.ones((3, 5))
    assert np.all(population_node_errors([a, b]) == 2.0)
    with pytest.raises(LengthMismatch):
        population_node_errors([a, np.ones((2, 5))])


def test_bland_altman():
    out = bland_altman([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert out["bias"] == 2.0
    assert out["loa_high"] - out["bias"] == pytest.approx(1.96)
    const = bland_altman([1.5, 2.5], [1.0, 2.0])
    assert const == {"bias": 0.5, "loa_low": 0.5, "loa_high": 0.5}
    with pytest.raises(TooFewSamples):
        bland_altman([1.0], [2.0])
    with pytest.raises(LengthMismatch):
        bland_altman([1.0, 2.0], [2.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=10))
def test_wilcoxon_exact_matches_enumeration(diffs):
    b = np.zeros(len(diffs))
    a = np.array(diffs, dtype=float) / 2.0
    got = wilcoxon_signed_rank(a, b)
    w, p = oracles.wilcoxon_enumeration(a, b)
    assert got["W"] == w
    assert got["p"] == pytest.approx(float(p), rel=1e-12)


def test_wilcoxon_zeros_dropped_and_normal_branch():
    out = wilcoxon_signed_rank([1.0, 2.0, 3.0, 5.0], [1.0, 2.0, 3.0, 4.0])
    assert out["n"] == 1
    assert wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0]) == {"W": 0.0, "p": 1.0, "n": 0, "method": "exact"}
    rng = np.random.default_rng(0)
    a = rng.normal(size=40)
    out = wilcoxon_signed_rank(a + 1.0, a - rng.normal(size=40))
    assert out["method"] == "normal" and out["n"] == 40 and 0 <= out["p"] <= 1
    shifted = wilcoxon_signed_rank(a + 3.0, a)
    assert shifted["W"] == 0.0 and shifted["p"] < 1e-6
    with pytest.raises(LengthMismatch):
        wilcoxon_signed_rank([1.0], [1.0, 2.0])


def test_report_check_and_to_dict():
    rep = MetricsReport(
        segmentation={"dice": 0.9, "assd": 0.1, "hd": 0.5},
        cfd={"nae": np.array([[1.0, np.nan]]), "mnae_s": np.array([1.0, np.nan])},
    )
    d = rep.to_dict()
    assert d["format_version"] == 1
    assert d["cfd"]["nae"] == [[1.0, None]]
    assert "bland_altman" not in d
    assert "nae" not in rep.to_dict(include_node_arrays=False)["cfd"]
    with pytest.raises(ValueError):
        MetricsReport(segmentation={"dice": 1.5})
    with pytest.raises(ValueError):
        MetricsReport(cfd={"nae": np.array([-1.0])})
    with pytest.raises(ValueError):
        MetricsReport(bland_altman={"p": {"bias": 2.0, "loa_low": 3.0, "loa_high": 4.0}})
