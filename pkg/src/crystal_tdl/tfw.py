"""Thomas-Fermi-von Weizsaecker model: energy, ground states, energy density.

The unknown is ``u = sqrt(rho)``.  With ``phi = K * (u^2 - mu)`` the
Coulomb potential of the net electron charge, the stationarity conditions
read

    -Delta u + 5/3 u^(7/3) + phi u = theta u,      int u^2 = N,

so the total potential ``V_tot = -phi + theta`` gives
``-Delta u + 5/3 u^(7/3) - V_tot u = 0``.  Here ``theta`` is the chemical
potential; ``TfwState.v_tot`` holds the electrostatic part ``-phi`` and
``theta`` is kept separately (see ``TfwState.full_potential``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coulomb import check_neutral, free_solver, periodic_potential_values
from .errors import ConvergenceError, DomainError, PreconditionError, ShapeError
from .fields import Lattice, NuclearConfiguration, ScalarField, nuclear_density, spectral_grid


@dataclass(frozen=True)
class TfwOptions:
    tol: float = 1e-9
    max_iter: int = 3000
    newton_switch: float = 10.0
    max_newton: int = 60
    precond_shift: float = 1.0
    armijo: float = 1e-4
    cg_max_iter: int = 400
    seed: int = 0


@dataclass(frozen=True, eq=False)
class TfwState:
    u: ScalarField
    v_tot: ScalarField
    theta: float
    config: NuclearConfiguration
    residual: float
    energy: float
    history: tuple = field(default=(), repr=False)
    iterations: int = 0

    @property
    def rho(self) -> ScalarField:
        return self.u * self.u

    @property
    def periodic(self) -> bool:
        return self.u.domain_kind == "periodic_cell"

    def full_potential(self) -> ScalarField:
        """``V_tot`` with the chemical potential absorbed."""
        return self.v_tot + self.theta


class TfwProblem:
    """Discrete TFW functional on one grid (periodic cell or free-space box)."""

    def __init__(self, mu: ScalarField, n_electrons: float):
        self.mu = mu
        self.lattice = mu.lattice
        self.shape = mu.grid_shape
        self.periodic = mu.domain_kind == "periodic_cell"
        self.grid = spectral_grid(self.lattice, self.shape)
        self.dV = self.grid.dV
        self.n_electrons = float(n_electrons)
        if self.periodic:
            grid = self.grid
            self.coulomb = lambda f: periodic_potential_values(grid, f)
        else:
            self.coulomb = free_solver(self.lattice, self.shape).potential

    def dot(self, a, b) -> float:
        return float(np.vdot(a, b).real * self.dV)

    def neg_laplacian(self, u):
        return self.grid.inv(self.grid.G2 * self.grid.fwd(u))

    def evaluate(self, u):
        """Energy, half-gradient ``F`` and ``phi`` at ``u``."""
        lap = self.neg_laplacian(u)
        rho = u * u
        phi = self.coulomb(rho - self.mu.values)
        au = np.abs(u)
        a43 = au ** (4.0 / 3.0)
        kin = self.dot(u, lap)
        tf = float(np.sum(a43 * rho) * self.dV)
        coul = 0.5 * self.dot(rho - self.mu.values, phi)
        F = lap + (5.0 / 3.0) * a43 * u + phi * u
        return kin + tf + coul, F, phi

    def hessian(self, u, phi, theta, d):
        """``(F'(u) - theta) d`` with ``F`` the half-gradient."""
        return (
            self.neg_laplacian(d)
            + (35.0 / 9.0) * np.abs(u) ** (4.0 / 3.0) * d
            + (phi - theta) * d
            + 2.0 * u * self.coulomb(u * d)
        )

    def normalize(self, u):
        return u * np.sqrt(self.n_electrons / self.dot(u, u))


class _Precond:
    def __init__(self, problem: TfwProblem, shift: float):
        self.p = problem
        self.mult = 1.0 / (problem.grid.G2 + shift)

    def __call__(self, x):
        g = self.p.grid
        return g.inv(self.mult * g.fwd(x))

    def projected(self, x, u, Ku, uKu):
        Kx = self(x)
        return Kx - (self.p.dot(Kx, u) / uKu) * Ku


def _initial_guess(problem: TfwProblem, seed: int):
    rng = np.random.default_rng(seed)
    g = problem.grid
    blur = np.exp(-0.5 * g.G2 * 0.6**2)
    base = np.maximum(g.inv(blur * g.fwd(problem.mu.values)), 0.0)
    base = base + 1e-3 * base.max() if not problem.periodic else base + base.mean()
    noise = g.inv(blur * g.fwd(rng.standard_normal(problem.shape)))
    noise /= max(np.abs(noise).max(), 1e-300)
    return np.sqrt(base) * (1.0 + 0.5 * noise)


def _pcg(apply_A, precond, b, dot, tol, max_iter):
    """Preconditioned CG; stops early on non-positive curvature."""
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = dot(r, z)
    bnorm = np.sqrt(max(dot(b, b), 1e-300))
    for it in range(max_iter):
        Ap = apply_A(p)
        pAp = dot(p, Ap)
        if pAp <= 0:
            return (p if it == 0 else x), it
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.sqrt(dot(r, r)) <= tol * bnorm:
            return x, it + 1
        z = precond(r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def minimize_tfw(problem: TfwProblem, options: TfwOptions = TfwOptions(), init=None):
    """Projected preconditioned descent on the sphere followed by Newton-CG.

    Returns ``(u, theta, phi, energy, residual, history, iterations)``.
    """
    u = _initial_guess(problem, options.seed) if init is None else np.abs(np.asarray(init, float))
    if u.shape != problem.shape:
        raise ShapeError("initial guess has the wrong grid shape")
    u = problem.normalize(u)
    K = _Precond(problem, options.precond_shift)
    N = problem.n_electrons
    E, F, phi = problem.evaluate(u)
    history = [E]
    t = 1.0
    residual = np.inf
    newton_steps = 0
    it = 0
    for it in range(1, options.max_iter + 1):
        theta = problem.dot(F, u) / N
        R = F - theta * u
        residual = float(np.abs(R).max())
        if residual < options.tol:
            break
        Ku = K(u)
        uKu = problem.dot(u, Ku)
        if residual < options.newton_switch and newton_steps < options.max_newton:
            newton_steps += 1
            d, _ = _pcg(
                lambda x: _tangent(problem, problem.hessian(u, phi, theta, x), u),
                lambda x: K.projected(x, u, Ku, uKu),
                -R,
                problem.dot,
                tol=min(0.1, np.sqrt(residual)),
                max_iter=options.cg_max_iter,
            )
            step = 1.0
            newton = True
        else:
            newton = False
            d = -K.projected(F, u, Ku, uKu)
            step = t
        slope = 2.0 * problem.dot(F, d)
        if slope >= 0:
            d = -R
            slope = 2.0 * problem.dot(F, d)
        dmax = np.abs(d).max()
        if dmax * step > 0.5 * np.abs(u).max():
            step = 0.5 * np.abs(u).max() / dmax
        accepted = False
        slack = 1e-13 * (abs(E) + 1.0)
        for _ in range(40):
            # |u| has the same energy as u; folding keeps iterates in the positive branch
            u_try = problem.normalize(np.abs(u + step * d))
            E_try, F_try, phi_try = problem.evaluate(u_try)
            if E_try <= E + options.armijo * step * slope or (step * abs(slope) < slack and E_try <= E + slack):
                accepted = True
                break
            if newton and E_try <= E + 1e3 * slack:
                # energy changes are at rounding level; fall back on the residual
                th = problem.dot(F_try, u_try) / N
                if np.abs(F_try - th * u_try).max() < 0.5 * residual:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            raise ConvergenceError(f"line search failed at residual {residual:.3e}", history)
        if not newton:
            t = min(2.0 * t, 8.0) if step == t else max(step, 1e-4)
        u, E, F, phi = u_try, E_try, F_try, phi_try
        history.append(E)
    else:
        theta = problem.dot(F, u) / N
        residual = float(np.abs(F - theta * u).max())
        if residual >= options.tol:
            raise ConvergenceError(
                f"TFW minimisation stopped after {options.max_iter} iterations at residual {residual:.3e}", history
            )
    return u, theta, phi, E, residual, tuple(history), it


def _tangent(problem, x, u):
    return x - (problem.dot(x, u) / problem.n_electrons) * u


def _make_state(problem, config, u, theta, phi, E, residual, history, iters):
    kind = problem.mu.domain_kind
    return TfwState(
        u=ScalarField(problem.lattice, u, kind),
        v_tot=ScalarField(problem.lattice, -phi, kind),
        theta=float(theta),
        config=config,
        residual=float(residual),
        energy=float(E),
        history=history,
        iterations=int(iters),
    )


def tfw_ground_state_cluster(
    config: NuclearConfiguration,
    n_electrons: float,
    box: Lattice,
    grid_shape,
    tol: float = 1e-9,
    options: TfwOptions | None = None,
    init=None,
) -> TfwState:
    """Neutral TFW ground state of a finite cluster inside a free-space box.

    Centres are given in box coordinates (the box spans ``box.B @ [0,1)^3``).
    """
    if config.periodic:
        raise DomainError("use tfw_ground_state_periodic for periodic configurations")
    if box.dim != 3:
        raise DomainError("cluster solves are three-dimensional")
    if abs(n_electrons - config.total_charge) > 1e-12:
        raise PreconditionError(
            f"only neutral clusters are modelled: N = {n_electrons} but nuclear charge is {config.total_charge}"
        )
    mu = nuclear_density(config, grid_shape, box=box)
    problem = TfwProblem(mu, n_electrons)
    opts = options or TfwOptions(tol=tol)
    if options is not None and tol != opts.tol:
        opts = TfwOptions(**{**opts.__dict__, "tol": tol})
    return _make_state(problem, config, *minimize_tfw(problem, opts, init))


def tfw_ground_state_periodic(
    lattice: Lattice,
    config: NuclearConfiguration,
    grid_shape,
    tol: float = 1e-9,
    options: TfwOptions | None = None,
    init=None,
) -> TfwState:
    """Per-cell TFW ground state for a crystal (one electron per unit of nuclear charge)."""
    if not config.periodic:
        raise DomainError("periodic solve needs a periodic configuration")
    if config.lattice != lattice:
        raise ShapeError("configuration lattice differs from the solve lattice")
    mu = nuclear_density(config, grid_shape)
    problem = TfwProblem(mu, config.total_charge)
    opts = options or TfwOptions(tol=tol)
    if options is not None and tol != opts.tol:
        opts = TfwOptions(**{**opts.__dict__, "tol": tol})
    return _make_state(problem, config, *minimize_tfw(problem, opts, init))


def tfw_energy(config: NuclearConfiguration, rho: ScalarField) -> float:
    """TFW energy of a density (per cell for periodic input)."""
    if rho.values.min() < -1e-12:
        raise DomainError(f"density has negative entries (min {rho.values.min():.3e})")
    if config.periodic:
        if rho.domain_kind != "periodic_cell" or rho.lattice != config.lattice:
            raise ShapeError("periodic configuration needs a density on its cell")
        mu = nuclear_density(config, rho.grid_shape)
        check_neutral(rho - mu, tol=1e-8)
    else:
        mu = nuclear_density(config, rho.grid_shape, box=rho.lattice)
    problem = TfwProblem(mu, rho.integral())
    E, _, _ = problem.evaluate(np.sqrt(np.maximum(rho.values, 0.0)))
    return E


def el_residual(state: TfwState) -> float:
    """Max-norm residual of ``-Delta u + 5/3 u^(7/3) - V_tot u``."""
    u = state.u.values
    lap = -state.u.laplacian()
    V = state.full_potential().values
    return float(np.abs(lap + (5.0 / 3.0) * np.abs(u) ** (4.0 / 3.0) * u - V * u).max())


@dataclass(frozen=True, eq=False)
class EnergyDensityField:
    values: ScalarField

    def total(self) -> float:
        return self.values.integral()

    def windowed_energy(self, lower, upper) -> float:
        """Integral over the grid points with fractional coordinates in ``[lower, upper)``."""
        shape = self.values.grid_shape
        dim = len(shape)
        lo = np.broadcast_to(np.asarray(lower, float), (dim,))
        hi = np.broadcast_to(np.asarray(upper, float), (dim,))
        masks = [(np.arange(n) / n >= a - 1e-12) & (np.arange(n) / n < b - 1e-12) for n, a, b in zip(shape, lo, hi)]
        sub = self.values.values[np.ix_(*masks)]
        return float(sub.sum() * self.values.grid.dV)

    def ball_energy(self, center, radius) -> float:
        pts = self.values.grid.points
        r2 = sum((pts[c] - center[c]) ** 2 for c in range(len(center)))
        return float(self.values.values[r2 <= radius**2].sum() * self.values.grid.dV)


def potential_gradient(state: TfwState) -> np.ndarray:
    """``grad V_tot`` without differentiating across the box boundary."""
    if state.periodic:
        return state.v_tot.gradient()
    solver = free_solver(state.u.lattice, state.u.grid_shape)
    mu = nuclear_density(state.config, state.u.grid_shape, box=state.u.lattice)
    return solver.field((mu - state.rho).values)


def energy_density(state: TfwState) -> EnergyDensityField:
    """``|grad u|^2 + u^(10/3) + |grad V_tot|^2 / (8 pi)`` on the state's grid."""
    u = state.u.values
    gu = state.u.gradient()
    gv = potential_gradient(state)
    dens = np.sum(gu**2, axis=0) + np.abs(u) ** (10.0 / 3.0) + np.sum(gv**2, axis=0) / (8 * np.pi)
    return EnergyDensityField(state.u.with_values(dens))


def periodic_crystal(lattice: Lattice, smearing_width: float, charge: float = 1.0) -> NuclearConfiguration:
    """One nucleus per cell at the origin."""
    return NuclearConfiguration(lattice, np.zeros((1, lattice.dim)), smearing_width, charge)


def cauchy_born_energy(
    B,
    smearing_width: float = 0.5,
    grid_shape=None,
    tol: float = 1e-10,
    options: TfwOptions | None = None,
) -> float:
    """Energy stored in one cell of the homogeneous crystal ``B Z^d``.

    The grid shape is held fixed as ``B`` varies, so the discrete energy is a
    smooth function of ``B``.
    """
    B = np.atleast_2d(np.asarray(B, float))
    if np.linalg.det(B) <= 0:
        raise PreconditionError("Cauchy-Born energy needs det B > 0")
    lattice = Lattice(B)
    if grid_shape is None:
        grid_shape = (24,) * lattice.dim
    state = tfw_ground_state_periodic(lattice, periodic_crystal(lattice, smearing_width), grid_shape, tol, options)
    return energy_density(state).total()
