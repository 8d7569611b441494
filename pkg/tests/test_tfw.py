import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crystal_tdl.errors import DomainError, PreconditionError
from crystal_tdl.fields import Lattice, NuclearConfiguration, ScalarField, nuclear_density
from crystal_tdl.tfw import (
    TfwOptions,
    TfwProblem,
    cauchy_born_energy,
    el_residual,
    energy_density,
    minimize_tfw,
    periodic_crystal,
    tfw_energy,
    tfw_ground_state_cluster,
    tfw_ground_state_periodic,
)


def _chain(a=2.0, w=0.5):
    lat = Lattice.cubic(a, 1)
    return lat, periodic_crystal(lat, w)


def test_uniform_background_gives_constant_density():
    # jellium: u is constant, E = N^(5/3) / |cell|^(2/3) (Coulomb and gradient terms vanish)
    lat = Lattice.cubic(1.5)
    N = 2.0
    mu = ScalarField(lat, np.full((8, 8, 8), N / lat.volume))
    problem = TfwProblem(mu, N)
    u, theta, phi, E, res, *_ = minimize_tfw(problem, TfwOptions(tol=1e-11, seed=3))
    assert np.allclose(u**2, N / lat.volume, rtol=1e-9)
    assert E == pytest.approx(N ** (5 / 3) / lat.volume ** (2 / 3), rel=1e-10)
    # theta = 5/3 rho^(2/3)
    assert theta == pytest.approx(5 / 3 * (N / lat.volume) ** (2 / 3), rel=1e-8)


def test_periodic_uniqueness_two_seeds():
    lat = Lattice.cubic(1.0)
    cfg = periodic_crystal(lat, 0.5)
    a = tfw_ground_state_periodic(lat, cfg, (12,) * 3, options=TfwOptions(tol=1e-10, seed=1))
    b = tfw_ground_state_periodic(lat, cfg, (12,) * 3, options=TfwOptions(tol=1e-10, seed=2))
    assert np.abs(a.rho.values - b.rho.values).max() < 1e-8
    assert a.energy == pytest.approx(b.energy, abs=1e-12)


def test_cluster_uniqueness_two_seeds():
    L, n = 4.0, 24
    h = L / n
    cfg = NuclearConfiguration(None, [[L / 2 + h / 2] * 3], 0.5)
    a = tfw_ground_state_cluster(cfg, 1.0, Lattice.cubic(L), (n,) * 3, options=TfwOptions(tol=1e-9, seed=1))
    b = tfw_ground_state_cluster(cfg, 1.0, Lattice.cubic(L), (n,) * 3, options=TfwOptions(tol=1e-9, seed=7))
    assert np.abs(a.rho.values - b.rho.values).max() < 1e-8
    assert a.rho.integral() == pytest.approx(1.0, rel=1e-12)


def test_ground_state_solves_euler_lagrange():
    lat, cfg = _chain()
    st_ = tfw_ground_state_periodic(lat, cfg, (32,), 1e-10)
    assert el_residual(st_) < 1e-8
    assert st_.u.values.min() > 0
    assert st_.rho.integral() == pytest.approx(1.0, rel=1e-12)
    # the electrostatic part of the potential has zero mean on the cell
    assert abs(st_.v_tot.mean()) < 1e-12


def test_energy_density_integrates_to_energy():
    lat = Lattice.cubic(1.0)
    st_ = tfw_ground_state_periodic(lat, periodic_crystal(lat, 0.5), (24,) * 3, 1e-10)
    ed = energy_density(st_)
    assert ed.total() == pytest.approx(st_.energy, abs=1e-9)
    assert ed.windowed_energy(0.0, 1.0) == pytest.approx(ed.total(), abs=1e-14)


def test_energy_of_density_matches_state():
    lat, cfg = _chain()
    st_ = tfw_ground_state_periodic(lat, cfg, (32,), 1e-10)
    assert tfw_energy(cfg, st_.rho) == pytest.approx(st_.energy, abs=1e-12)
    # any other admissible density costs more
    other = st_.rho.with_values(0.7 * st_.rho.values + 0.3 * st_.rho.mean())
    assert tfw_energy(cfg, other) > st_.energy


def _fd_check(problem, rng, n_probes=5, h=1e-5):
    shape = problem.shape
    u = np.sqrt(problem.n_electrons / problem.lattice.volume) * (1 + 0.3 * rng.random(shape))
    E0, F, _ = problem.evaluate(u)
    errs = []
    for _ in range(n_probes):
        d = rng.standard_normal(shape)
        d *= 0.1 * np.abs(u).max() / np.abs(d).max()
        ep = problem.evaluate(u + h * d)[0]
        em = problem.evaluate(u - h * d)[0]
        fd = (ep - em) / (2 * h)
        an = 2 * problem.dot(F, d)
        errs.append(abs(fd - an) / max(abs(an), 1e-300))
    return max(errs)


def test_energy_gradient_periodic_matches_finite_differences():
    lat = Lattice.cubic(1.0)
    mu = nuclear_density(periodic_crystal(lat, 0.5), (12,) * 3)
    assert _fd_check(TfwProblem(mu, 1.0), np.random.default_rng(11)) < 1e-6


def test_energy_gradient_cluster_matches_finite_differences():
    box = Lattice.cubic(4.0)
    cfg = NuclearConfiguration(None, [[2.0, 2.0, 2.0]], 0.5)
    mu = nuclear_density(cfg, (24,) * 3, box)
    assert _fd_check(TfwProblem(mu, 1.0), np.random.default_rng(12)) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 31), st.integers(0, 2**16))
def test_translation_equivariance(shift, seed):
    # moving the nucleus by whole grid steps rolls the ground state
    lat = Lattice.cubic(2.0, 1)
    n = 32
    a = tfw_ground_state_periodic(lat, NuclearConfiguration(lat, [[0.0]], 0.5), (n,), options=TfwOptions(tol=1e-11, seed=seed))
    b = tfw_ground_state_periodic(lat, NuclearConfiguration(lat, [[2.0 * shift / n]], 0.5), (n,),
                                  options=TfwOptions(tol=1e-11, seed=seed + 1))
    assert np.abs(np.roll(a.rho.values, shift) - b.rho.values).max() < 1e-9
    assert a.energy == pytest.approx(b.energy, abs=1e-11)


def test_cauchy_born_energy_has_interior_minimum():
    # locate the minimiser along isotropic scaling, then check convexity around it
    w = 1.2
    s = np.linspace(1.0, 3.0, 9)
    W = [cauchy_born_energy([[si]], w, (64,)) for si in s]
    i = int(np.argmin(W))
    assert 0 < i < len(s) - 1
    s_star = s[i]
    vals = [cauchy_born_energy([[f * s_star]], w, (64,)) for f in (0.9, 1.0, 1.1)]
    assert vals[1] < vals[0] and vals[1] < vals[2]


def test_cauchy_born_needs_orientation():
    with pytest.raises(PreconditionError):
        cauchy_born_energy([[-1.0]])


def test_cluster_must_be_neutral():
    cfg = NuclearConfiguration(None, [[2.0, 2.0, 2.0]], 0.5)
    with pytest.raises(PreconditionError):
        tfw_ground_state_cluster(cfg, 2.0, Lattice.cubic(4.0), (24,) * 3)


def test_wrong_solver_for_domain():
    lat, cfg = _chain()
    with pytest.raises(DomainError):
        tfw_ground_state_cluster(cfg, 1.0, Lattice.cubic(4.0), (24,) * 3)
    cluster = NuclearConfiguration(None, [[2.0, 2.0, 2.0]], 0.5)
    with pytest.raises(DomainError):
        tfw_ground_state_periodic(Lattice.cubic(4.0), cluster, (24,) * 3)


def test_negative_density_rejected():
    lat, cfg = _chain()
    rho = ScalarField(lat, np.full(32, 0.5))
    rho = rho.with_values(rho.values - np.where(np.arange(32) == 3, 1.0, 0.0))
    with pytest.raises(DomainError):
        tfw_energy(cfg, rho)
