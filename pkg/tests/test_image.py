import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from flowmesh.errors import ShapeMismatch
from flowmesh.image import ImageVolume, sample_grid, trilinear_sample


def test_volume_validation():
    assert ImageVolume(np.zeros((3, 4, 5))).data.shape == (1, 3, 4, 5)
    with pytest.raises(ShapeMismatch):
        ImageVolume(np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch):
        ImageVolume(np.full((2, 2, 2), np.nan))
    with pytest.raises(ShapeMismatch):
        ImageVolume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))


def test_volume_is_read_only():
    v = ImageVolume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0, 0] = 1.0


def test_index_mm_round_trip():
    v = ImageVolume(np.zeros((4, 4, 4)), spacing=(0.5, 2.0, 1.5), origin=(-1.0, 3.0, 7.0))
    p = np.array([[0.3, 4.1, 9.9], [-1.0, 3.0, 7.0]])
    assert np.allclose(v.to_mm(v.to_index(p)), p)
    assert np.array_equal(v.to_index(p[1:]), [[0.0, 0.0, 0.0]])


def test_grid_nodes_are_exact():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(2, 5, 6, 7))
    v = ImageVolume(data, spacing=(0.5, 1.0, 2.0), origin=(1.0, -2.0, 0.0))
    idx = np.array([[i, j, k] for i in range(5) for j in range(6) for k in range(7)])
    got = trilinear_sample(v, v.to_mm(idx))
    assert np.array_equal(got, data[:, idx[:, 0], idx[:, 1], idx[:, 2]].T)


def test_affine_field_reproduced():
    # trilinear interpolation is exact for functions linear in each axis
    g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij"), axis=-1)
    f = 2.0 * g[..., 0] - g[..., 1] + 0.5 * g[..., 2] + 3.0 + 0.25 * g[..., 0] * g[..., 1] * g[..., 2]
    rng = np.random.default_rng(1)
    q = rng.uniform(0, 5, size=(200, 3))
    want = 2.0 * q[:, 0] - q[:, 1] + 0.5 * q[:, 2] + 3.0 + 0.25 * q.prod(axis=1)
    assert np.allclose(sample_grid(f[..., None], q)[:, 0], want, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_ndimage_linear(seed):
    rng = np.random.default_rng(seed)
    grid = rng.normal(size=(4, 5, 3))
    q = rng.uniform(0, [3, 4, 2], size=(40, 3))
    ref = ndimage.map_coordinates(grid, q.T, order=1)
    assert np.allclose(sample_grid(grid[..., None], q)[:, 0], ref, atol=1e-12)


def test_outside_points_clamp_to_border():
    grid = np.arange(8.0).reshape(2, 2, 2, 1)
    got = sample_grid(grid, np.array([[-5.0, -5.0, -5.0], [9.0, 9.0, 9.0], [0.5, -1.0, 3.0]]))
    assert got[:, 0].tolist() == [0.0, 7.0, sample_grid(grid, np.array([[0.5, 0.0, 1.0]]))[0, 0]]


def test_single_voxel_axis():
    grid = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    assert sample_grid(grid, np.array([[0.5, 0.7, -2.0]]))[0, 0] == 2.0
