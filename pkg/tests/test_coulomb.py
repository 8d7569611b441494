import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crystal_tdl.coulomb import (
    coulomb_energy,
    madelung_constant,
    madelung_experiment,
    poisson_free,
    poisson_periodic,
)
from crystal_tdl.errors import DomainError, NeutralityError, SupportError
from crystal_tdl.fields import Lattice, ScalarField

import oracles

# neutral-cube direct sums (side 2M+1, M = 16, 32, 64) extrapolated in M^-2, M^-4; see oracles.py
MADELUNG_SC_DIRECT = -2.8372974968747617
# Ewald value frozen from the splitting-invariance run
MADELUNG_SC_EWALD = -2.8372974794806


def test_corner_cube_integral_oracle():
    assert oracles.corner_cube_integral_quadrature() == pytest.approx(oracles.CORNER_CUBE_INTEGRAL, abs=1e-10)


def test_madelung_simple_cubic_matches_direct_sum():
    m = madelung_constant(Lattice.cubic(1.0))
    assert m == pytest.approx(MADELUNG_SC_EWALD, abs=1e-12)
    assert abs(m - MADELUNG_SC_DIRECT) < 1e-6


@pytest.mark.parametrize("eta", [0.8, 1.2, 2.5, 4.0])
def test_madelung_independent_of_splitting(eta):
    assert madelung_constant(Lattice.cubic(1.0), eta=eta) == pytest.approx(MADELUNG_SC_EWALD, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 5.0), st.integers(0, 2**32 - 1))
def test_madelung_scaling_law(s, seed):
    B = np.eye(3) + 0.15 * np.random.default_rng(seed).standard_normal((3, 3))
    lat = Lattice(B)
    assert madelung_constant(lat.scaled(s)) == pytest.approx(madelung_constant(lat) / s, rel=1e-10)


def test_madelung_rejects_other_dimensions():
    with pytest.raises(DomainError):
        madelung_constant(Lattice.cubic(1.0, 2))


def test_madelung_experiment_report():
    rep = madelung_experiment(Lattice.cubic(1.0))
    assert rep.passed
    assert rep.metrics["madelung"] == pytest.approx(MADELUNG_SC_EWALD, abs=1e-12)
    assert len(rep.records) == 4


def test_periodic_poisson_cosine():
    a = 2.5
    G = 2 * np.pi / a
    f = ScalarField.from_function(Lattice.cubic(a), (8, 8, 8), lambda x, y, z: np.cos(G * x))
    V = poisson_periodic(f)
    assert np.allclose(V.values, 4 * np.pi / G**2 * f.values, atol=1e-12)
    # D(f, f) = 4 pi / G^2 * int cos^2 = 4 pi / G^2 * vol / 2
    assert coulomb_energy(f, f) == pytest.approx(4 * np.pi / G**2 * a**3 / 2, rel=1e-12)


def test_periodic_poisson_needs_neutral_cell():
    f = ScalarField(Lattice.cubic(1.0, 1), np.ones(8))
    with pytest.raises(NeutralityError):
        poisson_periodic(f)


def _band_limited(rng, shape):
    # on a skewed cell the Nyquist modes have no well-defined |G|^2, so drop them
    fh = np.fft.fftn(rng.standard_normal(shape))
    for axis, n in enumerate(shape):
        idx = [slice(None)] * len(shape)
        idx[axis] = n // 2
        fh[tuple(idx)] = 0.0
    return np.fft.ifftn(fh).real


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_periodic_pairing_symmetric_and_positive(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice(np.eye(3) + 0.1 * rng.standard_normal((3, 3)))
    f = ScalarField(lat, _band_limited(rng, (6, 4, 8)))
    g = ScalarField(lat, _band_limited(rng, (6, 4, 8)))
    f, g = f - f.mean(), g - g.mean()
    assert coulomb_energy(f, g) == pytest.approx(coulomb_energy(g, f), rel=1e-10, abs=1e-12)
    assert coulomb_energy(f, f) > 0
    # -Delta V = 4 pi f
    V = poisson_periodic(f)
    assert np.allclose(-V.laplacian(), 4 * np.pi * f.values, atol=1e-9 * np.abs(f.values).max())


def _gaussian(box, n, s, c):
    return ScalarField.from_function(
        box, (n,) * 3,
        lambda x, y, z: np.exp(-((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2) / (2 * s * s)) / (2 * np.pi * s * s) ** 1.5,
        "padded_free_space",
    )


def test_free_space_gaussian_against_quadrature():
    box, n, s = Lattice.cubic(8.0), 40, 0.4
    f = _gaussian(box, n, s, 4.0)
    V = poisson_free(f, margin=0.0)
    h = 8.0 / n
    for k in (1, 3, 6, 10):
        assert V.values[n // 2 + k, n // 2, n // 2] == pytest.approx(oracles.gaussian_potential(k * h, s), abs=1e-10)
    assert coulomb_energy(f, f) == pytest.approx(oracles.gaussian_self_energy(s), abs=1e-10)


def test_free_space_support_margin():
    f = _gaussian(Lattice.cubic(8.0), 32, 0.4, 1.0)
    with pytest.raises(SupportError):
        poisson_free(f)


def test_free_space_needs_three_dimensions():
    with pytest.raises(DomainError):
        poisson_free(ScalarField(Lattice.cubic(4.0, 2), np.zeros((8, 8)), "padded_free_space"))
