"""Kohn-Sham LDA layer on top of the periodic rHF machinery.

The Kohn-Sham map ``F[rho]`` builds ``-Delta/2 + V_H[rho] + V_xc[rho]``,
diagonalises it per k-point and returns the density of the lowest ``N_occ``
bands. For a gapped spectrum this eigenprojector filling equals the
contour-integral form of the spectral projector (residue theorem), so no
resolvent quadrature is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from .deformation import DeformationSpec
from .errors import BudgetError, ConvergenceError, DomainError, GapError, PreconditionError, StepError
from .fields import Lattice, NuclearConfiguration, ScalarField
from .report import Check, ConvergenceReport, FitSpec, Record
from .rhf import (
    PeriodicModel,
    ScfOptions,
    build_model,
    density_map,
    grid_for_cutoff,
    kinetic_energy,
    scf,
)
from .sweep import labelled, run_points

DIRAC_COEFFICIENT = 0.7386
DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class XcFunctional:
    """Dirac exchange ``e_xc(rho) = -c_d rho^(4/3)``; ``c_d = 0`` reduces to rHF."""

    kind: str = "dirac_exchange"
    c_d: float = DIRAC_COEFFICIENT
    floor: float = DENSITY_FLOOR

    def __post_init__(self):
        if self.kind != "dirac_exchange":
            raise ValueError(f"unsupported exchange-correlation kind {self.kind!r}")
        if self.c_d < 0:
            raise ValueError("the Dirac coefficient must be non-negative")

    def energy_density(self, rho: np.ndarray) -> np.ndarray:
        return -self.c_d * np.maximum(rho, 0.0) ** (4.0 / 3.0)

    def potential(self, rho: np.ndarray) -> np.ndarray:
        return -(4.0 / 3.0) * self.c_d * np.maximum(rho, self.floor) ** (1.0 / 3.0)

    def energy(self, rho: ScalarField) -> float:
        return float(np.sum(self.energy_density(rho.values)) * rho.grid.dV)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c_d": self.c_d}

    @classmethod
    def from_dict(cls, d: dict) -> "XcFunctional":
        return cls(d.get("kind", "dirac_exchange"), float(d["c_d"]))


@dataclass(frozen=True, eq=False)
class KsProblem:
    """Fixed data of a periodic Kohn-Sham problem."""

    model: PeriodicModel
    xc: XcFunctional
    gap_floor: float = 1e-6
    options: ScfOptions = ScfOptions()

    @classmethod
    def build(cls, config, xc=XcFunctional(), kgrid=1, cutoff: float = 40.0, grid_shape=None, gap_floor=1e-6, options=ScfOptions()):
        return cls(build_model(config, kgrid, cutoff, grid_shape), xc, gap_floor, options)

    @property
    def lattice(self) -> Lattice:
        return self.model.lattice

    def xc_potential(self, rho_values):
        if self.xc.c_d == 0:
            return np.zeros_like(rho_values)
        return self.xc.potential(rho_values)

    def xc_energy(self, rho_values) -> float:
        return float(np.sum(self.xc.energy_density(rho_values)) * self.model.grid.dV)

    def apply(self, rho_values, check_gap: bool = True):
        res = density_map(self.model, rho_values, self.xc_potential, None, self.options)
        if check_gap and res.gap <= self.gap_floor:
            homo = max(float(e[self.model.n_occ - 1]) for e in res.bands)
            lumo = min(float(e[self.model.n_occ]) for e in res.bands)
            raise GapError(f"Kohn-Sham gap {res.gap:.3g} below the floor {self.gap_floor:g}", homo, lumo)
        return res

    def __call__(self, rho: ScalarField) -> ScalarField:
        return rho.with_values(self.apply(rho.values).rho)

    def energy(self, res) -> float:
        """Kohn-Sham energy per cell of the occupied orbitals in ``res``."""
        kin = kinetic_energy(self.model, res.orbitals, res.occupations)
        return kin + self.model.hartree_energy(res.rho) + self.xc_energy(res.rho)


def ks_map(rho: ScalarField, config, xc: XcFunctional = XcFunctional(), kgrid=1, cutoff: float = 40.0, gap_floor: float = 1e-6) -> ScalarField:
    """One application of the periodic Kohn-Sham map on ``rho``'s grid."""
    return KsProblem.build(config, xc, kgrid, cutoff, rho.grid_shape, gap_floor)(rho)


@dataclass(eq=False)
class KsFixedPoint:
    """Converged Kohn-Sham density; unpacks as ``(rho, gap)``."""

    rho: ScalarField
    gap: float
    problem: KsProblem
    residual: float
    energy: float
    bands: list = field(repr=False)
    history: list = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.rho, self.gap))


def ks_fixed_point(
    rho0,
    config,
    xc: XcFunctional = XcFunctional(),
    tol: float = 1e-10,
    kgrid=1,
    cutoff: float = 40.0,
    grid_shape=None,
    gap_floor: float = 1e-6,
    options: ScfOptions = ScfOptions(),
) -> KsFixedPoint:
    """Damped (Anderson accelerated) iteration until ``|F(rho) - rho|_inf < tol``.

    ``rho0`` is a ScalarField, grid values, ``"uniform"`` or ``"nuclear"``.
    The returned density is the last input ``rho`` (so ``F(rho) - rho`` is
    below ``tol`` by construction); the gap is checked at every iterate.
    """
    if isinstance(rho0, ScalarField) and grid_shape is None:
        grid_shape = rho0.grid_shape
    problem = KsProblem.build(config, xc, kgrid, cutoff, grid_shape, gap_floor, options)
    model = problem.model
    if isinstance(rho0, str):
        if rho0 == "uniform":
            init = np.full(model.grid_shape, model.n_occ / model.lattice.volume)
        elif rho0 == "nuclear":
            init = model.mu.values.copy()
        else:
            raise ValueError(f"unknown initial density {rho0!r}")
    else:
        init = np.asarray(rho0.values if isinstance(rho0, ScalarField) else rho0, float)
        if init.min() < 0:
            raise PreconditionError("initial density must be non-negative")
        total = init.sum() * model.grid.dV
        if abs(total - model.n_occ) > 1e-8 * max(1.0, model.n_occ):
            raise PreconditionError(f"initial density carries {total:.10g} electrons per cell, expected {model.n_occ}")
    res, rho_in, r, hist = scf(model, tol, options, init, problem.xc_potential, None, None, "always")
    if res.gap <= gap_floor:
        raise GapError(f"fixed point has gap {res.gap:.3g}")
    return KsFixedPoint(ScalarField(model.lattice, rho_in), res.gap, problem, r, problem.energy(res), res.bands, hist)


# -- linear response ---------------------------------------------------------


def linearized_map_apply(fp: KsFixedPoint, w: ScalarField, h: float | None = None) -> ScalarField:
    """Central difference ``(F[rho* + h w] - F[rho* - h w]) / (2 h)``.

    The default step makes the perturbation ``1e-4 |rho*|_inf`` in sup norm.
    """
    rho = fp.rho.values
    wn = float(np.max(np.abs(w.values)))
    if wn == 0.0:
        return w.with_values(np.zeros_like(rho))
    scale = float(np.max(np.abs(rho)))
    if h is None:
        h = 1e-4 * scale / wn
    if h * wn < 1e-9 * scale:
        raise StepError(f"step {h:.3g} is below the rounding floor of the map")
    plus = fp.problem.apply(rho + h * w.values).rho
    minus = fp.problem.apply(rho - h * w.values).rho
    return w.with_values((plus - minus) / (2 * h))


def fourier_modes(lattice: Lattice, shape, n_modes: int) -> list:
    """The lowest ``n_modes`` real, L2-orthonormal, zero-mean Fourier modes."""
    from .fields import spectral_grid

    g = spectral_grid(lattice, shape)
    x = g.points.reshape(lattice.dim, -1).T
    d = lattice.dim
    kmax = n_modes // 2 + 1
    rng = np.arange(-kmax, kmax + 1)
    m = np.stack(np.meshgrid(*[rng] * d, indexing="ij"), -1).reshape(-1, d)
    m = m[np.any(m != 0, axis=1)]
    # keep one of each +-m pair (first nonzero entry positive)
    first = np.array([r[np.flatnonzero(r)[0]] for r in m])
    m = m[first > 0]
    G = m @ lattice.reciprocal.T
    order = np.lexsort(tuple(m.T[::-1]) + (np.round(np.sum(G**2, axis=1), 10),))
    modes = []
    norm = np.sqrt(2.0 / lattice.volume)
    for i in order:
        phase = x @ G[i]
        for f in (np.cos, np.sin):
            if len(modes) < n_modes:
                modes.append(ScalarField(lattice, (norm * f(phase)).reshape(shape)))
    return modes


@dataclass
class StabilityReport:
    n_modes: int
    sigma_max: float  # largest singular value of the projected linearised map
    sigma_min: float  # smallest singular value of I - (projected map)
    matrix: np.ndarray = field(repr=False)
    iterations: tuple = (0, 0)

    @property
    def stable(self) -> bool:
        return self.sigma_min > 0

    def to_dict(self) -> dict:
        return {"n_modes": self.n_modes, "sigma_max": self.sigma_max, "sigma_min": self.sigma_min, "iterations": list(self.iterations)}


def projected_response(fp: KsFixedPoint, n_modes: int, h: float | None = None) -> np.ndarray:
    """Matrix ``<e_i, L0 e_j>`` on the lowest Fourier modes (one map difference per column)."""
    modes = fourier_modes(fp.rho.lattice, fp.rho.grid_shape, n_modes)
    dV = fp.rho.grid.dV
    E = np.array([e.values.ravel() for e in modes])
    M = np.empty((len(modes), len(modes)))
    for j, e in enumerate(modes):
        M[:, j] = E @ linearized_map_apply(fp, e, h).values.ravel() * dV
    return M


def _power(apply, n, seed, tol, max_iter):
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        u = apply(v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 0.0, it
        v = u / new
        if abs(new - lam) <= tol * new:
            return new, it
        lam = new
    raise ConvergenceError(f"power iteration stagnated after {max_iter} steps", [lam])


def stability_probe(fp: KsFixedPoint, n_modes: int = 20, seed: int = 0, tol: float = 1e-12, max_iter: int = 20000, h=None) -> StabilityReport:
    """Singular-value evidence for invertibility of ``I - L0`` on low Fourier modes.

    The projected map is assembled from finite differences, then power
    iteration on ``M^T M`` gives the largest singular value of ``M`` and
    inverse iteration on ``(I - M)^T (I - M)`` the smallest one of ``I - M``.
    """
    M = projected_response(fp, n_modes, h)
    n = len(M)
    lam_max, it1 = _power(lambda v: M.T @ (M @ v), n, seed, tol, max_iter)
    K = np.eye(n) - M
    KtK = K.T @ K
    try:
        lu = np.linalg.inv(KtK)
    except np.linalg.LinAlgError:
        return StabilityReport(n, float(np.sqrt(lam_max)), 0.0, M, (it1, 0))
    lam_inv, it2 = _power(lambda v: lu @ v, n, seed + 1, tol, max_iter)
    return StabilityReport(n, float(np.sqrt(lam_max)), float(1.0 / np.sqrt(lam_inv)), M, (it1, it2))


def ks_fixedpoint_experiment(
    config: NuclearConfiguration,
    xc: XcFunctional = XcFunctional(),
    kgrid=8,
    cutoff: float = 40.0,
    tol: float = 1e-10,
    n_modes: int = 20,
    seed: int = 0,
    reduction_tol: float = 1e-7,
    residual_max: float = 1e-8,
    sigma_floor: float = 0.0,
    options: ScfOptions = ScfOptions(),
) -> ConvergenceReport:
    """Reduction to rHF at ``c_d = 0``, the ``c_d > 0`` fixed point and its stability probe.

    Records are indexed by ``c_d`` (0 and the configured value); the fixed
    point is computed from the uniform and the nuclear start and both
    densities are compared.
    """
    from .rhf import rhf_scf

    grid = grid_for_cutoff(config.lattice, cutoff)
    with labelled("rHF reference"):
        ref = rhf_scf(config.lattice, config, kgrid, 0.1 * tol, cutoff, grid, options)
    with labelled("c_d=0"):
        fp0 = ks_fixed_point("nuclear", config, XcFunctional(xc.kind, 0.0, xc.floor), 0.1 * tol, kgrid, cutoff, grid, options=options)
    with labelled(f"c_d={xc.c_d:g}"):
        fp = ks_fixed_point("nuclear", config, xc, tol, kgrid, cutoff, grid, options=options)
    with labelled(f"c_d={xc.c_d:g} uniform start"):
        fpu = ks_fixed_point("uniform", config, xc, tol, kgrid, cutoff, grid, options=options)
    with labelled("stability probe"):
        probe = stability_probe(fp, n_modes, seed)
    records = [
        Record(0.0, fp0.residual, fp0.residual, 0.0, {"gap": fp0.gap, "energy": fp0.energy, "iterations": len(fp0.history)}),
        Record(xc.c_d, fp.residual, fp.residual, 0.0, {"gap": fp.gap, "energy": fp.energy, "iterations": len(fp.history)}),
    ]
    metrics = {
        "reduction_density": float(np.max(np.abs(fp0.rho.values - ref.density.values))),
        "reduction_energy": abs(fp0.energy - ref.extra["energy"]),
        "initialisation_spread": float(np.max(np.abs(fp.rho.values - fpu.rho.values))),
        "gap": fp.gap,
        "residual": fp.residual,
        "stability": probe.to_dict(),
        "sigma_min": probe.sigma_min,
        "sigma_max": probe.sigma_max,
    }
    checks = [
        Check("c_d = 0 reduces to rHF", "metric:reduction_density", "<", reduction_tol),
        Check("fixed-point residual", "metric:residual", "<", residual_max),
        Check("positive gap", "metric:gap", ">", 0.0),
        Check("I - L0 invertible on probe modes", "metric:sigma_min", ">", sigma_floor),
    ]
    return ConvergenceReport(
        "ks-fixedpoint", records, [], checks,
        {"grid_sizes": {"unit": list(grid)}, "kgrid": kgrid, "xc": xc.to_dict(), "seed": seed},
        label="toy analogue" if config.dim < 3 else "",
    ).with_metrics(metrics)


# -- Cauchy-Born densities ---------------------------------------------------


def deformed_config(config: NuclearConfiguration, A) -> NuclearConfiguration:
    """Crystal homogeneously deformed by ``I + A`` (nuclei move with the lattice)."""
    d = config.dim
    F = np.eye(d) + np.atleast_2d(np.asarray(A, float))
    if np.linalg.det(F) <= 0:
        raise PreconditionError("det(I + A) must be positive")
    return config.with_centers(config.centers @ F.T, lattice=config.lattice.deformed(F))


def reference_cutoff(cutoff: float, F) -> float:
    """Cutoff on a cell deformed by ``F`` that keeps the reference-cell basis.

    Scaling by ``det(F)^(-2/d)`` maps the plane-wave set of the undeformed
    cell onto itself for isotropic strains (every strain when d = 1), so the
    discrete basis does not jump as the cell is stretched.
    """
    F = np.atleast_2d(np.asarray(F, float))
    return float(cutoff) * abs(np.linalg.det(F)) ** (-2.0 / len(F))


def cb_grid(config: NuclearConfiguration, cutoff: float, max_strain: float = 0.25) -> tuple:
    """One grid shape that is alias free for every admissible strain."""
    return grid_for_cutoff(config.lattice.scaled(1 + max_strain), cutoff)


def cb_density(
    A,
    config: NuclearConfiguration,
    xc: XcFunctional = XcFunctional(),
    kgrid=8,
    cutoff: float = 40.0,
    grid_shape=None,
    tol: float = 1e-11,
    max_strain: float = 0.25,
    options: ScfOptions = ScfOptions(),
) -> ScalarField:
    """Fixed-point density of the crystal deformed by ``I + A``.

    The field lives on the deformed cell with the undeformed grid shape, so
    grid point ``j`` sits at ``(I + A) B j / N``: values are index aligned
    with the undeformed density. ``cutoff`` refers to the undeformed cell.
    """
    A = np.atleast_2d(np.asarray(A, float))
    if np.linalg.norm(A, 2) > max_strain:
        raise DomainError(f"|A| = {np.linalg.norm(A, 2):.3g} exceeds the configured bound {max_strain}")
    if grid_shape is None:
        grid_shape = cb_grid(config, cutoff, max_strain)
    cfg = deformed_config(config, A)
    ecut = reference_cutoff(cutoff, np.eye(len(A)) + A)
    return ks_fixed_point("nuclear", cfg, xc, tol, kgrid, ecut, grid_shape, options=options).rho


class CauchyBornDensityTable:
    """``rho_CB(. ; a)`` for scalar strains ``a`` (d = 1) on Chebyshev nodes, barycentric in ``a``."""

    def __init__(self, config, xc, lo, hi, nodes=12, kgrid=8, cutoff=40.0, grid_shape=None, tol=1e-11, options=ScfOptions()):
        if config.dim != 1:
            raise DomainError("the density table is implemented for d = 1")
        if grid_shape is None:
            grid_shape = cb_grid(config, cutoff)
        self.grid_shape = tuple(grid_shape)
        if hi - lo < 1e-14:
            self.nodes = np.array([lo])
            vals = [cb_density([[lo]], config, xc, kgrid, cutoff, grid_shape, tol, options=options).values.ravel()]
        else:
            j = np.arange(nodes)
            self.nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (2 * j + 1) / (2 * nodes))
            vals = [cb_density([[a]], config, xc, kgrid, cutoff, grid_shape, tol, options=options).values.ravel() for a in self.nodes]
        self.values = np.array(vals)
        self._interp = None if len(self.nodes) == 1 else BarycentricInterpolator(self.nodes, self.values)

    def __call__(self, a) -> np.ndarray:
        """Densities for strains ``a`` (shape ``(m,)``) -> ``(m, N)``."""
        a = np.atleast_1d(np.asarray(a, float))
        if self._interp is None:
            return np.repeat(self.values, len(a), axis=0)
        return np.atleast_2d(self._interp(a))


def trig_interpolate(values: np.ndarray, lattice: Lattice, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of 1-d grid data at Cartesian points."""
    n = values.size
    c = np.fft.fft(values) / n
    m = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        # split the Nyquist coefficient symmetrically so the interpolant is real
        c = np.concatenate([c, [0.5 * c[n // 2]]])
        c[n // 2] *= 0.5
        m = np.concatenate([m, [n // 2]])
    s = lattice.to_fractional(np.atleast_2d(points).reshape(-1, 1))[:, 0]
    return np.real(np.exp(2j * np.pi * np.outer(s, m)) @ c)


def _deformed_supercell_density(args):
    deform, config, xc, cutoff, unit_grid, tol, options = args
    n = deform.n
    cell, pos = deform.supercell()
    cfg = NuclearConfiguration(cell, pos, config.smearing_width, config.charge_per_nucleus)
    grid = tuple(n * g for g in unit_grid)
    ecut = reference_cutoff(cutoff, np.eye(config.dim) + deform.A)
    fp = ks_fixed_point("nuclear", cfg, xc, tol, 1, ecut, grid, options=options)
    return fp.rho.values, fp.gap


def cb_comparison_experiment(
    deform: DeformationSpec,
    config: NuclearConfiguration,
    xc: XcFunctional = XcFunctional(),
    eps_list=(1 / 2, 1 / 4, 1 / 8),
    cutoff: float = 40.0,
    unit_grid=None,
    tol: float = 1e-10,
    nodes: int = 12,
    max_n: int = 16,
    min_exponent: float = 0.3,
    floor: float = 1e-7,
    options: ScfOptions = ScfOptions(),
    workers=None,
) -> ConvergenceReport:
    """Deformed supercell densities against the Cauchy-Born prediction.

    For ``eps = 1/n`` the ``n``-cell supercell with nuclei at ``n Y(B j / n)``
    is solved at the Gamma point. Reference grid points ``X`` are mapped to
    ``n Y(X / n)`` (Lagrangian registration) and the supercell density there
    is compared with ``rho_CB(. ; grad Y(X / n) - I)`` at the same index
    inside the cell. ``rho_CB`` uses the ``n``-point k-grid equivalent to the
    supercell, which makes the comparison exact for homogeneous deformations.
    Lengths stay microscopic, so no ``eps^-d`` factor appears.
    """
    lat = deform.lattice
    if lat.dim != 1:
        raise DomainError("the Cauchy-Born density comparison is implemented for d = 1")
    if config.lattice != lat:
        raise PreconditionError("the deformation and the crystal must share the reference lattice")
    ns = sorted({int(round(1 / e)) for e in eps_list})
    if max(ns) > max_n:
        raise BudgetError(f"supercell of {max(ns)} cells exceeds the configured maximum {max_n}")
    if unit_grid is None:
        unit_grid = cb_grid(config, cutoff)
    unit_grid = tuple(unit_grid)
    N = unit_grid[0]
    items = [(deform.with_epsilon(1.0 / n), config, xc, cutoff, unit_grid, tol, options) for n in ns]
    out = run_points(_deformed_supercell_density, items, workers, [f"n={n}" for n in ns])
    records = []
    for n, ((rho, gap), secs) in zip(ns, out):
        dn = deform.with_epsilon(1.0 / n)
        cell, _ = dn.supercell()
        X = (np.arange(n * N) * lat.B[0, 0] / N)[:, None]
        y = n * dn.Y(X / n)
        strain = dn.gradient(X / n)[:, 0, 0] - 1.0
        lo, hi = float(strain.min()), float(strain.max())
        table = CauchyBornDensityTable(config, xc, lo, hi, nodes, n, cutoff, unit_grid, tol * 0.1, options)
        pred = table(strain)[np.arange(n * N), np.arange(n * N) % N]
        actual = trig_interpolate(rho, cell, y)
        dev = float(np.max(np.abs(actual - pred)) / np.max(np.abs(pred)))
        records.append(Record(1.0 / n, dev, 0.0, secs, {"n": n, "gap": gap, "strain_min": lo, "strain_max": hi}))
    if deform.is_trivial():
        specs, checks = [], [Check("homogeneous deformation at floor", "records:max:value", "<", floor)]
    else:
        specs = [FitSpec("eps", "algebraic")]
        checks = [
            Check("positive rate", "fit:eps:exponent", ">=", min_exponent),
            Check("deviation decreasing with eps", "records:increasing:value", ">=", 1.0),
        ]
    report = ConvergenceReport("ks-cb", records, specs, checks, label="toy analogue")
    return report
