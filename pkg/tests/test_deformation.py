import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crystal_tdl.deformation import DeformationSpec, FourierMode
from crystal_tdl.errors import DeformationError
from crystal_tdl.fields import Lattice


def _spec(amp=0.2, A=0.0, eps=1.0, a=4.0):
    return DeformationSpec(Lattice.cubic(a, 1), [[A]], (FourierMode((1,), (amp,), 0.3),), eps)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.3, 0.3), st.floats(0.0, 4.0))
def test_gradient_matches_finite_differences(amp, A, x):
    d = _spec(amp, A)
    h = 1e-6
    fd = (d.Y([[x + h]]) - d.Y([[x - h]])) / (2 * h)
    assert d.gradient([[x]])[0, 0, 0] == pytest.approx(fd[0, 0], abs=1e-8)


def test_displacement_is_periodic():
    d = _spec()
    x = np.linspace(0, 4, 9)[:, None]
    assert np.allclose(d.u_per(x), d.u_per(x + 4.0))


def test_not_bijective_rejected():
    # |u'| = 2 pi amp / a > 1 folds the crystal
    with pytest.raises(DeformationError):
        _spec(amp=0.8)


def test_epsilon_must_be_reciprocal_integer():
    with pytest.raises(DeformationError):
        _spec(eps=0.3)


def test_supercell_positions():
    d = _spec(amp=0.1, A=0.05, eps=1 / 4)
    cell, pos = d.supercell()
    assert cell.B[0, 0] == pytest.approx(4 * 1.05 * 4.0)
    j = np.arange(4) * 4.0
    expect = 4 * (j / 4 * 1.05 + 0.1 * np.sin(2 * np.pi * (j / 4) / 4.0 + 0.3))
    assert np.allclose(pos[:, 0], expect)


def test_trivial_and_affine():
    d = DeformationSpec(Lattice.cubic(1.0, 2), np.diag([0.1, -0.05]))
    assert d.is_trivial()
    x = np.random.default_rng(0).random((5, 2))
    assert np.allclose(d.Y(x), x @ np.diag([1.1, 0.95]).T)


def test_dimension_checked():
    with pytest.raises(DeformationError):
        DeformationSpec(Lattice.cubic(1.0, 2), np.zeros((3, 3)))
    with pytest.raises(DeformationError):
        DeformationSpec(Lattice.cubic(1.0, 2), None, (FourierMode((1,), (0.1,)),))
