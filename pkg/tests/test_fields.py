import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowmesh.errors import EmptySource, FieldLengthMismatch, WrongSpace, ZeroSigma
from flowmesh.fields import NodeFields, NormStats, denormalize_fields, normalize_fields, transfer_fields
from flowmesh.synth import generate_phantom

STATS = NormStats(2.0, 1.5, (0.1, -0.2, 0.3), (0.5, 0.25, 2.0), "test")

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.just(4)), elements=finite))
def test_round_trip_raw(arr):
    f = NodeFields.from_array(arr, "raw")
    back = denormalize_fields(normalize_fields(f, STATS), STATS).as_array()
    assert np.allclose(back, arr, rtol=1e-9, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.just(4)), elements=st.floats(-10, 10)))
def test_round_trip_normalized(arr):
    f = NodeFields.from_array(arr, "normalized")
    back = normalize_fields(denormalize_fields(f, STATS), STATS).as_array()
    assert np.allclose(back, arr, rtol=1e-9, atol=1e-9)


def test_signed_cube_root():
    f = NodeFields([-8.0, 27.0], np.zeros((2, 3)))
    stats = NormStats(0.0, 1.0, (0, 0, 0), (1, 1, 1))
    assert normalize_fields(f, stats).pressure.tolist() == [-2.0, 3.0]


def test_space_is_enforced():
    f = NodeFields.zeros(3)
    with pytest.raises(WrongSpace):
        normalize_fields(f, STATS)
    with pytest.raises(WrongSpace):
        denormalize_fields(NodeFields.zeros(3, "raw"), STATS)
    with pytest.raises(WrongSpace):
        NodeFields([0.0], [[0, 0, 0]], "kelvin")


def test_field_validation():
    with pytest.raises(FieldLengthMismatch):
        NodeFields([0.0, 1.0], [[0, 0, 0]])
    with pytest.raises(FieldLengthMismatch):
        NodeFields([np.nan], [[0, 0, 0]])
    f = NodeFields([1.0], [[3.0, 4.0, 0.0]])
    assert f.speed.tolist() == [5.0]


def test_stats_from_fields_and_zero_sigma():
    f = NodeFields([1.0, 8.0], [[0, 1, 2], [0, 3, 2]])
    with pytest.raises(ZeroSigma):
        NormStats.from_fields(f)
    s = NormStats.from_fields(f, zero_std_fallback=1.0)
    assert s.pressure_mean == 1.5 and s.pressure_std == 0.5
    assert s.velocity_std == (1.0, 1.0, 1.0)
    assert NormStats.from_dict(s.to_dict()) == s


def test_stats_file_round_trip(tmp_path):
    STATS.save(tmp_path / "s.json")
    assert NormStats.load(tmp_path / "s.json") == STATS


def test_transfer_identity_on_same_mesh(bifurcation):
    out, rep = transfer_fields(bifurcation.mesh, bifurcation.fields, bifurcation.mesh.vertices)
    assert np.array_equal(out.as_array(), bifurcation.fields.as_array())
    assert rep.extrapolated == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_transfer_affine_exact(seed):
    rng = np.random.default_rng(seed)
    src = generate_phantom(kind="bifurcation", target_nodes=300, jitter=0.1, seed=seed % 7, with_image=False).mesh
    a, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    vals = NodeFields.from_array(src.vertices @ a.T + b)
    cells = rng.integers(0, src.n_tets, 200)
    w = rng.dirichlet(np.ones(4), 200)
    pts = np.einsum("nk,nkd->nd", w, src.vertices[src.tets[cells]])
    out, rep = transfer_fields(src, vals, pts)
    ref = pts @ a.T + b
    assert rep.extrapolated == 0
    assert np.max(np.abs(out.as_array() - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_transfer_convexity(straight):
    rng = np.random.default_rng(1)
    m = straight.mesh
    vals = rng.normal(size=(m.n_vertices, 4))
    cells = rng.integers(0, m.n_tets, 300)
    w = rng.dirichlet(np.ones(4), 300)
    pts = np.einsum("nk,nkd->nd", w, m.vertices[m.tets[cells]])
    out, _ = transfer_fields(m, NodeFields.from_array(vals), pts)
    # interpolated values stay within the containing cell's range; the
    # located cell may be a neighbour sharing the point, so use a tiny slack
    from flowmesh.spatial import TetLocator

    tet, _ = TetLocator(m.vertices, m.tets).locate(pts)
    corner = vals[m.tets[tet]]
    assert np.all(out.as_array() >= corner.min(axis=1) - 1e-12)
    assert np.all(out.as_array() <= corner.max(axis=1) + 1e-12)


def test_transfer_outside_falls_back_to_nearest(straight):
    m = straight.mesh
    far = np.array([[0.0, 0.0, -50.0]])
    out, rep = transfer_fields(m, straight.fields, far)
    nearest = np.argmin(np.linalg.norm(m.vertices - far, axis=1))
    assert rep.extrapolated == 1 and rep.extrapolated_ids.tolist() == [0]
    assert np.array_equal(out.as_array()[0], straight.fields.as_array()[nearest])
    assert rep.to_dict() == {"n_points": 1, "extrapolated": 1}


def test_transfer_errors(straight):
    with pytest.raises(FieldLengthMismatch):
        transfer_fields(straight.mesh, NodeFields.zeros(3, "raw"), [[0, 0, 0]])
    with pytest.raises(EmptySource):
        transfer_fields(None, straight.fields, [[0, 0, 0]])


def test_transfer_keeps_space(straight):
    f = normalize_fields(straight.fields, straight.stats)
    out, _ = transfer_fields(straight.mesh, f, straight.mesh.vertices[:5])
    assert out.space == "normalized"
