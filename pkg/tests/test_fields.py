import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crystal_tdl.errors import ResolutionError, ShapeError, SupportError
from crystal_tdl.fields import (
    Lattice,
    NuclearConfiguration,
    ScalarField,
    bump,
    check_resolution,
    load_field,
    nuclear_density,
    required_grid,
    save_field,
    sobolev_norm,
    sobolev_seminorms,
)


def test_lattice_reciprocal_duality():
    B = np.array([[1.0, 0.3, 0.0], [0.0, 1.2, 0.1], [0.2, 0.0, 0.9]])
    lat = Lattice(B)
    assert np.allclose(lat.reciprocal.T @ lat.B, 2 * np.pi * np.eye(3))
    assert lat.volume == pytest.approx(abs(np.linalg.det(B)))


def test_singular_lattice_rejected():
    with pytest.raises(ValueError):
        Lattice(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        Lattice(np.eye(4))


def test_odd_grid_rejected():
    with pytest.raises(ShapeError):
        ScalarField(Lattice.cubic(1.0, 1), np.zeros(7))


def test_spectral_derivatives_of_a_plane_wave():
    lat = Lattice.cubic(2.0, 2)
    k = 2 * np.pi / 2.0
    f = ScalarField.from_function(lat, (16, 16), lambda x, y: np.sin(k * x) * np.cos(2 * k * y))
    lap = f.laplacian()
    assert np.allclose(lap, -5 * k * k * f.values, atol=1e-11)
    g = f.gradient()
    assert np.allclose(g[0], k * np.cos(k * f.grid.points[0]) * np.cos(2 * k * f.grid.points[1]), atol=1e-12)


def test_mean_and_integral():
    lat = Lattice.cubic(3.0, 1)
    f = ScalarField.from_function(lat, (12,), lambda x: 2.0 + np.cos(2 * np.pi * x / 3.0))
    assert f.mean() == pytest.approx(2.0, abs=1e-14)
    assert f.integral() == pytest.approx(6.0, abs=1e-13)


def test_sobolev_norms_of_a_cosine():
    # f = cos(G x) on a cell of length a: int f^2 = a/2, |D f|^2 gains G^2
    a = 2.0
    G = 2 * np.pi / a
    f = ScalarField.from_function(Lattice.cubic(a, 1), (16,), lambda x: np.cos(G * x))
    assert sobolev_seminorms(f, 0) == pytest.approx(np.sqrt(a / 2), rel=1e-13)
    assert sobolev_seminorms(f, 1) == pytest.approx(G * np.sqrt(a / 2), rel=1e-13)
    assert sobolev_norm(f, 2) == pytest.approx((1 + G * G) * np.sqrt(a / 2), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sobolev_norm_monotone_in_k(seed):
    rng = np.random.default_rng(seed)
    f = ScalarField(Lattice.cubic(1.7, 2), rng.standard_normal((8, 10)))
    norms = [sobolev_norm(f, k) for k in range(3)]
    assert norms[0] <= norms[1] * (1 + 1e-12) and norms[1] <= norms[2] * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, (6,)), (2, (4, 6)), (3, (4, 4, 2))]))
def test_snapshot_round_trip(tmp_path_factory, seed, case):
    dim, shape = case
    rng = np.random.default_rng(seed)
    B = np.eye(dim) + 0.1 * rng.standard_normal((dim, dim))
    f = ScalarField(Lattice(B), rng.standard_normal(shape))
    path = tmp_path_factory.mktemp("snap") / "f.bin"
    save_field(f, path)
    g = load_field(path)
    assert g.lattice == f.lattice
    assert np.array_equal(g.values, f.values)


def test_snapshot_size_mismatch(tmp_path):
    f = ScalarField(Lattice.cubic(1.0, 1), np.arange(4.0))
    p = tmp_path / "f.bin"
    save_field(f, p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ShapeError):
        load_field(p)


def test_bump_profile():
    r = np.array([0.0, 0.5, 1.0, 2.0])
    assert np.allclose(bump(r, 1.0), [1.0, 0.75**4, 0.0, 0.0])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.3, 0.6))
def test_nuclear_charge_exact_on_grid(x, y, w):
    lat = Lattice.cubic(2.0, 2)
    cfg = NuclearConfiguration(lat, [[2 * x, 2 * y], [0.5, 1.5]], w)
    mu = nuclear_density(cfg, required_grid(lat, w))
    assert mu.integral() == pytest.approx(2.0, rel=1e-13)
    assert mu.values.min() >= 0


def test_periodic_centres_wrap():
    lat = Lattice.cubic(1.0, 1)
    a = nuclear_density(NuclearConfiguration(lat, [[0.25]], 0.2), (16,))
    b = nuclear_density(NuclearConfiguration(lat, [[3.25]], 0.2), (16,))
    assert np.allclose(a.values, b.values)


def test_resolution_and_support_errors():
    lat = Lattice.cubic(1.0, 3)
    with pytest.raises(ResolutionError):
        check_resolution(lat, (4, 4, 4), 0.2)
    box = Lattice.cubic(4.0)
    cluster = NuclearConfiguration(None, [[0.1, 2.0, 2.0]], 0.5)
    with pytest.raises(SupportError):
        nuclear_density(cluster, (24, 24, 24), box)


def test_cluster_min_distance_floor():
    with pytest.raises(ValueError):
        NuclearConfiguration(None, [[0.0, 0.0, 0.0], [0.0, 0.0, 1e-8]], 0.5)
