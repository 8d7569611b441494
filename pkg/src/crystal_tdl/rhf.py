"""Periodic reduced Hartree-Fock in a plane-wave Bloch basis.

Energy per cell of a periodic density matrix with occupied Bloch orbitals
``u_{n,k}`` (spinless, integer occupations)::

    E = sum_k w_k sum_n occ_{n,k} <u_{n,k}, |-i grad + k|^2 / 2 u_{n,k}>
        + 1/2 D_per(rho - mu, rho - mu)

with ``D_per`` the zero-mode-free ``4 pi / |G|^2`` pairing in every dimension.
The self-consistent state is found by damped (Anderson accelerated) density
mixing; for this model the effective potential is linear in the density, so
density mixing and potential mixing produce identical iterates.

Occupations are eigenprojector fillings (lowest ``N_occ`` bands per k, or all
states below a fixed Fermi level), the exact value of the contour-integral
representation of the spectral projector whenever the spectrum is gapped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .bloch import (
    BlochState,
    PlaneWaveBasis,
    hamiltonian_matrix,
    fill_canonical,
    fill_grand_canonical,
    monkhorst_grid,
    orbital_density,
    plane_wave_basis,
)
from .coulomb import coulomb_multiplier
from .errors import ConvergenceError, MarginError, MetallicError, PreconditionError
from .fields import FFT_WORKERS, Lattice, NuclearConfiguration, ScalarField, nuclear_density, spectral_grid
from .mixing import AndersonMixer
from .rates import fit_rate, richardson
from .report import Check, ConvergenceReport, FitSpec, Record
from .sweep import labelled, run_points


@dataclass(frozen=True)
class ScfOptions:
    beta: float = 0.3
    anderson_depth: int = 5
    max_iter: int = 400
    gap_floor: float = 1e-6
    extra_bands: int = 4
    scheme: str = "anderson"  # or "oda" (optimal damping on density matrices, rHF only)
    oda_switch: float = 1e-3  # residual at which "oda" hands over to Anderson mixing


def grid_for_cutoff(lattice: Lattice, cutoff: float) -> tuple:
    """Even grid that is alias free for any k and for every supercell multiple."""
    mmax = np.ceil(np.sqrt(2 * cutoff) * np.linalg.norm(lattice.B, axis=0) / (2 * np.pi)).astype(int)
    n = 4 * (mmax + 1) + 2
    return tuple(int(v + v % 2) for v in n)


def _kgrid(lattice: Lattice, kgrid):
    if isinstance(kgrid, tuple) and len(kgrid) == 2 and np.ndim(kgrid[0]) == 2:
        k, w = kgrid
        return np.asarray(k, float), np.asarray(w, float)
    return monkhorst_grid(lattice, kgrid)


@dataclass(frozen=True, eq=False)
class PeriodicModel:
    """Everything that stays fixed during an SCF run."""

    config: NuclearConfiguration
    cutoff: float
    grid_shape: tuple
    kpoints: np.ndarray
    kweights: np.ndarray
    bases: tuple
    mu: ScalarField
    n_occ: int

    @property
    def lattice(self) -> Lattice:
        return self.config.lattice

    @property
    def grid(self):
        return spectral_grid(self.lattice, self.grid_shape)

    def hartree(self, rho_values: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.inv(coulomb_multiplier(g.G2) * g.fwd(rho_values - self.mu.values))

    def hartree_energy(self, rho_values: np.ndarray) -> float:
        g = self.grid
        fh = g.fwd(rho_values - self.mu.values)
        return 0.5 * g.parseval(fh, fh, coulomb_multiplier(g.G2))


@dataclass(frozen=True, eq=False)
class UniformBackground:
    """Uniform positive background (jellium) carrying ``charge`` per cell."""

    lattice: Lattice
    charge: float = 1.0

    @property
    def total_charge(self) -> float:
        return self.charge

    @property
    def periodic(self) -> bool:
        return True

    def density(self, grid_shape) -> ScalarField:
        return ScalarField(self.lattice, np.full(tuple(grid_shape), self.charge / self.lattice.volume))


def build_model(config: NuclearConfiguration, kgrid=1, cutoff: float = 20.0, grid_shape=None, n_electrons=None) -> PeriodicModel:
    lattice = config.lattice
    if lattice is None:
        raise PreconditionError("periodic rHF needs a periodic nuclear configuration")
    if grid_shape is None:
        grid_shape = grid_for_cutoff(lattice, cutoff)
    grid_shape = tuple(int(n) for n in grid_shape)
    k, w = _kgrid(lattice, kgrid)
    bases = tuple(plane_wave_basis(lattice, kk, cutoff, grid_shape) for kk in k)
    mu = config.density(grid_shape) if isinstance(config, UniformBackground) else nuclear_density(config, grid_shape)
    n_occ = config.total_charge if n_electrons is None else n_electrons
    if abs(n_occ - round(n_occ)) > 1e-12:
        raise PreconditionError("integer filling needs an integer nuclear charge per cell")
    return PeriodicModel(config, float(cutoff), grid_shape, k, w, bases, mu, int(round(n_occ)))


@dataclass
class MapResult:
    rho: np.ndarray
    bands: list
    orbitals: list  # occupied columns only
    occupations: list  # aligned with orbitals
    fermi_level: float
    gap: float
    potential: np.ndarray


def _diagonalize(basis: PlaneWaveBasis, v_hat: np.ndarray, nkeep: int):
    H = hamiltonian_matrix(basis, v_hat)
    e, c = np.linalg.eigh(H)
    return e[:nkeep], c[:, :nkeep]


def density_map(model: PeriodicModel, rho_values, extra_potential=None, fermi_level=None, options=ScfOptions()):
    """One application of the self-consistent map ``rho -> rho[H(rho)]``.

    ``extra_potential(rho_values) -> values`` adds a density-dependent term
    (exchange-correlation in the Kohn-Sham layer). With ``fermi_level`` the
    filling is grand canonical, otherwise ``N_occ`` bands per k.
    """
    v = model.hartree(rho_values)
    if extra_potential is not None:
        v = v + extra_potential(rho_values)
    v_hat = sfft.fftn(v, workers=FFT_WORKERS) / v.size
    nkeep = model.n_occ + options.extra_bands
    bands, vecs = [], []
    for b in model.bases:
        e, c = _diagonalize(b, v_hat, min(nkeep, b.size))
        bands.append(e)
        vecs.append(c)
    if fermi_level is None:
        occ, ef, gap = fill_canonical(bands, model.kweights, model.n_occ, gap_floor=-np.inf)
    else:
        if any(e[-1] < fermi_level for e in bands):
            # more states below the Fermi level than computed: keep them all
            bands, vecs = [], []
            for b in model.bases:
                e, c = _diagonalize(b, v_hat, b.size)
                n = min(b.size, int(np.sum(e < fermi_level)) + options.extra_bands)
                bands.append(e[:n])
                vecs.append(c[:, :n])
        occ, gap = fill_grand_canonical(bands, fermi_level, gap_floor=-np.inf)
        ef = float(fermi_level)
    rho = np.zeros(model.grid_shape)
    orbitals, occupations = [], []
    for b, c, o, w in zip(model.bases, vecs, occ, model.kweights):
        nocc = int(np.sum(o > 0))
        orbitals.append(c[:, :nocc])
        occupations.append(o[:nocc])
        rho += w * orbital_density(b, c[:, :nocc], o[:nocc])
    return MapResult(rho, bands, orbitals, occupations, ef, gap, v)


def kinetic_energy(model: PeriodicModel, orbitals, occupations) -> float:
    total = 0.0
    for b, c, o, w in zip(model.bases, orbitals, occupations, model.kweights):
        total += w * float(np.sum(o * np.sum(b.kinetic[:, None] * np.abs(c) ** 2, axis=0)))
    return total


def density_of(model: PeriodicModel, orbitals, occupations) -> np.ndarray:
    rho = np.zeros(model.grid_shape)
    for b, c, o, w in zip(model.bases, orbitals, occupations, model.kweights):
        rho += w * orbital_density(b, c, o)
    return rho


def energy_from_orbitals(model: PeriodicModel, orbitals, occupations, xc_energy=None) -> float:
    """Energy per cell as an explicit function of the orbital coefficients.

    The orbitals are used as given (no orthonormalisation); ``xc_energy``
    maps grid density values to an energy per cell.
    """
    rho = density_of(model, orbitals, occupations)
    e = kinetic_energy(model, orbitals, occupations) + model.hartree_energy(rho)
    if xc_energy is not None:
        e += xc_energy(rho)
    return e


def energy_gradient(model: PeriodicModel, orbitals, occupations, xc_potential=None) -> list:
    """``dE/d conj(c)`` per k so that ``dE = 2 Re sum_k <grad_k, dc_k>``."""
    rho = density_of(model, orbitals, occupations)
    v = model.hartree(rho)
    if xc_potential is not None:
        v = v + xc_potential(rho)
    v_hat = sfft.fftn(v, workers=FFT_WORKERS) / v.size
    return [w * (hamiltonian_matrix(b, v_hat) @ c) * o[None, :] for b, c, o, w in zip(model.bases, orbitals, occupations, model.kweights)]


def _state(model: PeriodicModel, res: MapResult, residual, history, extra=None) -> BlochState:
    return BlochState(
        lattice=model.lattice,
        kpoints=model.kpoints,
        kweights=model.kweights,
        basis_cutoff=model.cutoff,
        orbitals=tuple(res.orbitals),
        occupations=tuple(res.occupations),
        fermi_level=res.fermi_level,
        bands=tuple(res.bands),
        density=ScalarField(model.lattice, res.rho),
        bases=model.bases,
        gap=res.gap,
        residual=residual,
        history=tuple(history),
        extra=dict(extra or {}),
    )


def scf(
    model: PeriodicModel,
    tol: float = 1e-10,
    options: ScfOptions = ScfOptions(),
    init=None,
    extra_potential=None,
    fermi_level=None,
    callback=None,
    gap_check: str = "final",
):
    """Self-consistent field iteration; returns ``(MapResult, rho_in, residual, history)``.

    ``gap_check`` is ``"final"`` (raise only if the converged state has no gap)
    or ``"always"`` (also raise when the gap closes again after having opened).
    """
    if init is None:
        rho = model.mu.values.copy()
    else:
        rho = np.array(init.values if isinstance(init, ScalarField) else init, float)
    history = []
    if options.scheme == "oda":
        if extra_potential is not None:
            raise PreconditionError("optimal damping needs the quadratic rHF energy")
        done, rho = _scf_oda(model, tol, options, rho, fermi_level, callback, history)
        if done is not None:
            return done
    elif options.scheme != "anderson":
        raise ValueError(f"unknown SCF scheme {options.scheme!r}")
    mixer = AndersonMixer(options.beta, options.anderson_depth)
    opened = False
    for it in range(len(history), options.max_iter):
        res = density_map(model, rho, extra_potential, fermi_level, options)
        if gap_check == "always":
            # the gap may only close after it has opened (trivial starts are gapless)
            if res.gap > options.gap_floor:
                opened = True
            elif opened:
                raise MetallicError(f"gap closed at iteration {it} ({res.gap:.3g})", None, None)
        r = float(np.max(np.abs(res.rho - rho)))
        history.append(r)
        if callback is not None:
            callback(it, res)
        if r < tol:
            if res.gap <= options.gap_floor:
                raise MetallicError(f"converged state has no gap ({res.gap:.3g})", None, None)
            return res, rho, r, history
        rho = mixer.update(rho.ravel(), res.rho.ravel()).reshape(model.grid_shape)
    raise ConvergenceError(f"SCF did not reach {tol:g} in {options.max_iter} iterations (last {history[-1]:.3g})", history)


def _scf_oda(model, tol, options, rho, fermi_level, callback, history):
    """Optimal damping: line search between the current mixed state and the aufbau state.

    The (grand-canonical) rHF energy is quadratic along the segment, so the
    optimal step is explicit and the energy never increases.
    """
    g = model.grid
    mult = coulomb_multiplier(g.G2)
    ef = 0.0 if fermi_level is None else float(fermi_level)

    def summary(res):
        kin = kinetic_energy(model, res.orbitals, res.occupations)
        n = float(sum(w * np.sum(o) for w, o in zip(model.kweights, res.occupations)))
        return kin - ef * n

    res = density_map(model, rho, None, fermi_level, options)
    rho, lin = res.rho, summary(res)
    for it in range(options.max_iter):
        res = density_map(model, rho, None, fermi_level, options)
        r = float(np.max(np.abs(res.rho - rho)))
        history.append(r)
        if callback is not None:
            callback(it, res)
        if r < tol:
            if res.gap <= options.gap_floor:
                raise MetallicError(f"converged state has no gap ({res.gap:.3g})", None, None)
            return (res, rho, r, history), rho
        if r < options.oda_switch:
            return None, rho
        lin_new = summary(res)
        dh = g.fwd(res.rho - rho)
        curv = g.parseval(dh, dh, mult)
        slope = lin_new - lin + g.parseval(dh, g.fwd(rho - model.mu.values), mult)
        t = 1.0 if curv <= 0 else float(np.clip(-slope / curv, 0.0, 1.0))
        if t == 0.0:
            t = 1e-3
        rho = (1 - t) * rho + t * res.rho
        lin = (1 - t) * lin + t * lin_new
    raise ConvergenceError(f"SCF did not reach {tol:g} in {options.max_iter} iterations (last {history[-1]:.3g})", history)


def rhf_scf(
    lattice: Lattice,
    config: NuclearConfiguration,
    kgrid=1,
    tol: float = 1e-10,
    cutoff: float = 20.0,
    grid_shape=None,
    options: ScfOptions = ScfOptions(),
    init=None,
    fermi_level=None,
    callback=None,
    n_electrons=None,
) -> BlochState:
    """Self-consistent periodic rHF state on a uniform k-grid.

    ``kgrid`` is an integer (per axis), a tuple of per-axis counts, or an
    explicit ``(kpoints, weights)`` pair.
    """
    if config.lattice is None or config.lattice != lattice:
        raise PreconditionError("configuration must be periodic with respect to the given lattice")
    model = build_model(config, kgrid, cutoff, grid_shape, n_electrons)
    res, rho_in, r, hist = scf(model, tol, options, init, None, fermi_level, callback)
    state = _state(model, res, r, hist, {"mu": model.mu, "n_occ": model.n_occ, "model": model})
    state.extra["energy"] = rhf_energy_per_cell(state)
    return state


def rhf_energy_per_cell(state: BlochState) -> float:
    """Kinetic energy from the orbitals plus half the periodic Coulomb self-pairing."""
    bases = state.bases
    kin = 0.0
    for b, c, o, w in zip(bases, state.orbitals, state.occupations, state.kweights):
        kin += w * float(np.sum(o * np.sum(b.kinetic[:, None] * np.abs(c) ** 2, axis=0)))
    mu = state.extra.get("mu")
    if mu is None:
        raise PreconditionError("state carries no nuclear density")
    g = state.density.grid
    fh = g.fwd(state.density.values - mu.values)
    return kin + 0.5 * g.parseval(fh, fh, coulomb_multiplier(g.G2))


def full_reciprocal_vectors(lattice: Lattice, shape) -> np.ndarray:
    """Reciprocal vectors in full (complex) FFT layout, shape ``(*shape, dim)``."""
    freqs = [sfft.fftfreq(n, 1.0 / n) for n in shape]
    m = np.stack(np.meshgrid(*freqs, indexing="ij"), -1)
    return m @ lattice.reciprocal.T


def _periodic_orbitals(basis: PlaneWaveBasis, coeffs: np.ndarray) -> np.ndarray:
    ntot = int(np.prod(basis.grid_shape))
    out = np.empty((coeffs.shape[1],) + basis.grid_shape, complex)
    for n in range(coeffs.shape[1]):
        arr = np.zeros(basis.grid_shape, complex)
        arr[basis.grid_index] = coeffs[:, n]
        out[n] = sfft.ifftn(arr, workers=FFT_WORKERS) * ntot
    return out / np.sqrt(basis.lattice.volume)


def hf_exchange_energy(state: BlochState) -> float:
    """Exchange energy per cell ``-1/2 int_cell int |gamma(r, r')|^2 / |r - r'|``.

    Evaluated as a double sum over the k-grid,
    ``-1/2 sum_{k,q} w_k w_q sum_{n,m} |Omega| sum_G v(G + k - q) |g_hat(G)|^2``
    with ``g = conj(u_{m,q}) u_{n,k}`` and ``v = 4 pi / |.|^2``; the singular
    ``G + k - q = 0`` term is dropped, as everywhere else in the package.
    """
    lattice = state.lattice
    shape = state.density.grid_shape
    Gfull = full_reciprocal_vectors(lattice, shape)
    vol = lattice.volume
    ntot = int(np.prod(shape))
    orbs = [_periodic_orbitals(b, c) for b, c in zip(state.bases, state.orbitals)]
    total = 0.0
    for ik, (k, wk) in enumerate(zip(state.kpoints, state.kweights)):
        for iq, (q, wq) in enumerate(zip(state.kpoints, state.kweights)):
            mult = coulomb_multiplier(np.sum((Gfull + (k - q)) ** 2, axis=-1))
            for n, on in enumerate(state.occupations[ik]):
                for m, om in enumerate(state.occupations[iq]):
                    if on == 0 or om == 0:
                        continue
                    g = np.conj(orbs[iq][m]) * orbs[ik][n]
                    gh = sfft.fftn(g, workers=FFT_WORKERS) / ntot
                    total += wk * wq * on * om * vol * float(np.sum(mult * np.abs(gh) ** 2))
    return -0.5 * total


# -- supercells ----------------------------------------------------------------


def unit_lattice_of(config_L: NuclearConfiguration, L) -> Lattice:
    L = np.broadcast_to(np.asarray(L, float), (config_L.dim,))
    return Lattice(config_L.lattice.B / L[None, :])


def tile_config(config: NuclearConfiguration, L) -> NuclearConfiguration:
    """The ``L``-fold periodic supercell of a perfect crystal."""
    lat = config.lattice
    L = np.broadcast_to(np.asarray(L, int), (lat.dim,))
    shifts = np.stack(np.meshgrid(*[np.arange(n) for n in L], indexing="ij"), -1).reshape(-1, lat.dim)
    centers = (shifts @ lat.B.T)[:, None, :] + config.centers[None, :, :]
    return config.with_centers(centers.reshape(-1, lat.dim), lattice=lat.supercell(L))


def supercell_solve(
    L,
    config_L: NuclearConfiguration,
    tol: float = 1e-10,
    cutoff: float = 20.0,
    unit_grid=None,
    options: ScfOptions = ScfOptions(),
    fermi_level=None,
    n_electrons=None,
    init=None,
) -> BlochState:
    """Gamma-point SCF on the ``L``-fold supercell ``config_L``.

    The supercell grid is ``L`` times the unit-cell grid, so perfect-crystal
    results coincide with unit-cell solves on the ``L`` k-grid. ``extra``
    holds ``energy_total`` and ``energy_per_cell`` (total / L^d).
    """
    unit = unit_lattice_of(config_L, L)
    Lv = np.broadcast_to(np.asarray(L, int), (unit.dim,))
    if unit_grid is None:
        unit_grid = grid_for_cutoff(unit, cutoff)
    grid = tuple(int(n * g) for n, g in zip(Lv, unit_grid))
    state = rhf_scf(config_L.lattice, config_L, 1, tol, cutoff, grid, options, init, fermi_level, None, n_electrons)
    state.extra["energy_total"] = state.extra["energy"]
    state.extra["energy_per_cell"] = state.extra["energy"] / float(np.prod(Lv))
    state.extra["supercell"] = tuple(int(n) for n in Lv)
    return state


def supercell_kgrid_equivalence(config: NuclearConfiguration, L, tol: float = 1e-11, cutoff: float = 40.0, unit_grid=None,
                                options: ScfOptions = ScfOptions()) -> dict:
    """Perfect-crystal ``L``-supercell against the unit cell on the ``L`` k-grid."""
    lat = config.lattice
    if unit_grid is None:
        unit_grid = grid_for_cutoff(lat, cutoff)
    kst = rhf_scf(lat, config, L, tol, cutoff, unit_grid, options)
    sst = supercell_solve(L, tile_config(config, L), tol, cutoff, unit_grid, options)
    Lv = np.broadcast_to(np.asarray(L, int), (lat.dim,))
    tiled = np.tile(kst.density.values, tuple(Lv))
    return {
        "L": int(Lv[0]) if np.all(Lv == Lv[0]) else [int(n) for n in Lv],
        "energy_difference": abs(kst.extra["energy"] - sst.extra["energy_per_cell"]),
        "density_difference": float(np.max(np.abs(sst.density.values - tiled))),
    }


def _supercell_point(args):
    config, L, tol, cutoff, unit_grid, options = args
    st = supercell_solve(L, tile_config(config, L), tol, cutoff, unit_grid, options)
    return st.extra["energy_per_cell"], st.density.values, st.residual


def supercell_convergence_experiment(
    config: NuclearConfiguration,
    L_list=(1, 2, 3, 4, 5, 6),
    L_ref: int | None = None,
    cutoff: float = 40.0,
    tol: float = 1e-11,
    unit_grid=None,
    options: ScfOptions = ScfOptions(),
    r2_min: float = 0.9,
    equivalence_L=(),
    equivalence_tol=(1e-9, 1e-8),
    workers=None,
) -> ConvergenceReport:
    """Supercell energy per cell and density against a dense k-grid reference.

    For every size in ``equivalence_L`` the supercell solve is also compared
    with the unit cell on the matching k-grid (energy, density tolerances in
    ``equivalence_tol``).
    """
    lat = config.lattice
    L_list = sorted(int(n) for n in L_list)
    L_ref = 2 * max(L_list) if L_ref is None else int(L_ref)
    if unit_grid is None:
        unit_grid = grid_for_cutoff(lat, cutoff)
    with labelled(f"reference L={L_ref}"):
        ref = rhf_scf(lat, config, L_ref, tol, cutoff, unit_grid, options)
    W = ref.extra["energy"]
    out = run_points(_supercell_point, [(config, L, tol, cutoff, unit_grid, options) for L in L_list], workers,
                     [f"L={L}" for L in L_list])
    records = []
    for L, ((e, rho, res), secs) in zip(L_list, out):
        tiled = np.tile(ref.density.values, (L,) * lat.dim)
        records.append(
            Record(
                float(L),
                abs(W - e),
                res,
                secs,
                {"density_error": float(np.max(np.abs(rho - tiled))), "energy_per_cell": e},
            )
        )
    specs = [FitSpec("energy", "exponential"), FitSpec("density", "exponential", y="density_error")]
    checks = [
        Check("energy rate positive", "fit:energy:exponent", ">", 0.0),
        Check("energy fit quality", "fit:energy:r_squared", ">", r2_min),
        Check("density rate positive", "fit:density:exponent", ">", 0.0),
        Check("density fit quality", "fit:density:r_squared", ">", r2_min),
        Check("energy errors monotone", "records:monotone:value", ">=", 1.0),
        Check("density errors monotone", "records:monotone:density_error", ">=", 1.0),
    ]
    metrics = {"reference_energy": W, "L_ref": L_ref, "reference_gap": ref.gap}
    if len(equivalence_L):
        eq = []
        for L in equivalence_L:
            with labelled(f"equivalence L={int(L)}"):
                eq.append(supercell_kgrid_equivalence(config, int(L), tol, cutoff, unit_grid, options))
        metrics["equivalence"] = eq
        metrics["equivalence_energy"] = max(e["energy_difference"] for e in eq)
        metrics["equivalence_density"] = max(e["density_difference"] for e in eq)
        checks += [
            Check("supercell energy equals k-grid", "metric:equivalence_energy", "<", equivalence_tol[0]),
            Check("supercell density equals k-grid", "metric:equivalence_density", "<", equivalence_tol[1]),
        ]
    report = ConvergenceReport("rhf-supercell", records, specs, checks, label="toy analogue" if lat.dim < 3 else "")
    return report.with_metrics(metrics)


# -- defects -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DefectSpec:
    """Local change of the nuclear configuration of a perfect crystal.

    ``removed`` are Cartesian positions of host nuclei (any periodic image),
    ``added`` are Cartesian positions of extra nuclei, all inside the ball of
    ``radius`` around the origin.
    """

    host: NuclearConfiguration
    removed: tuple = ()
    added: tuple = ()
    radius: float | None = None

    def __post_init__(self):
        if self.host.lattice is None:
            raise PreconditionError("defects live in a periodic host")
        d = self.host.dim
        rem = np.array(self.removed, float).reshape(-1, d)
        add = np.array(self.added, float).reshape(-1, d)
        pts = np.vstack([rem, add])
        reach = float(np.max(np.linalg.norm(pts, axis=1))) if len(pts) else 0.0
        radius = reach + self.host.smearing_width if self.radius is None else float(self.radius)
        if reach > radius + 1e-12:
            raise PreconditionError(f"defect sites reach {reach:.3g}, beyond the declared radius {radius:.3g}")
        object.__setattr__(self, "removed", rem)
        object.__setattr__(self, "added", add)
        object.__setattr__(self, "radius", radius)

    @property
    def base_lattice(self) -> Lattice:
        return self.host.lattice

    @property
    def charge(self) -> float:
        """Total nuclear charge of the defect."""
        return (len(self.added) - len(self.removed)) * self.host.charge_per_nucleus

    @property
    def is_empty(self) -> bool:
        return len(self.added) == 0 and len(self.removed) == 0

    def check_margin(self, L) -> None:
        lat = self.base_lattice
        L = np.broadcast_to(np.asarray(L, float), (lat.dim,))
        # half the shortest supercell height minus the defect ball, in units of L/4 cells
        heights = 1.0 / np.linalg.norm(lat.inverse, axis=1)
        room = np.min(L * heights) / 2 - self.radius
        need = np.min(L * heights) / 4
        if room < need - 1e-12:
            raise MarginError(f"defect of radius {self.radius:.3g} leaves margin {room:.3g} < {need:.3g} in the {tuple(L.astype(int))} supercell")

    def apply(self, L) -> NuclearConfiguration:
        perfect = tile_config(self.host, L)
        sl = perfect.lattice
        centers = perfect.centers
        keep = np.ones(len(centers), bool)
        for x in self.removed:
            frac = sl.to_fractional(centers - x)
            dist = np.linalg.norm(sl.to_cartesian(frac - np.round(frac)), axis=1)
            hit = np.flatnonzero((dist < 1e-8) & keep)
            if len(hit) == 0:
                raise PreconditionError(f"no host nucleus at {x}")
            keep[hit[0]] = False
        new = np.vstack([centers[keep], self.added]) if len(self.added) else centers[keep]
        return perfect.with_centers(new)


def host_fermi_level(host: NuclearConfiguration, kgrid: int = 24, cutoff: float = 40.0, tol: float = 1e-11, unit_grid=None) -> tuple:
    """Midpoint of the perfect crystal's gap; returns ``(fermi_level, gap)``."""
    st = rhf_scf(host.lattice, host, kgrid, tol, cutoff, unit_grid)
    return st.fermi_level, st.gap


DEFECT_OPTIONS = ScfOptions(scheme="oda", max_iter=1000)


def _grand_canonical(st: BlochState, fermi_level: float) -> tuple:
    n = float(sum(np.sum(o) for o in st.occupations))
    return st.extra["energy"] - fermi_level * n, n


def defect_energy_details(
    defect: DefectSpec,
    L,
    fermi_level: float,
    cutoff: float = 40.0,
    tol: float = 1e-10,
    unit_grid=None,
    options: ScfOptions = DEFECT_OPTIONS,
    n_electrons=None,
) -> dict:
    """Grand-canonical supercell energies with and without the defect.

    ``n_electrons`` switches the defect solve to a fixed electron count
    (used for the charged comparison).
    """
    defect.check_margin(L)
    if unit_grid is None:
        unit_grid = grid_for_cutoff(defect.base_lattice, cutoff)
    perfect = supercell_solve(L, tile_config(defect.host, L), tol, cutoff, unit_grid, options, fermi_level)
    e_perf, n_perf = _grand_canonical(perfect, fermi_level)
    if defect.is_empty:
        e_def, n_def, gap = e_perf, n_perf, perfect.gap
    else:
        if n_electrons is None:
            st = supercell_solve(L, defect.apply(L), tol, cutoff, unit_grid, options, fermi_level)
        else:
            st = supercell_solve(L, defect.apply(L), tol, cutoff, unit_grid, options, None, n_electrons)
        e_def, n_def = _grand_canonical(st, fermi_level)
        gap = st.gap
    return {
        "J": e_def - e_perf,
        "n_electrons": n_def,
        "n_perfect": n_perf,
        "net_charge": (n_perf + defect.charge) - n_def,
        "gap": gap,
    }


def defect_energy(defect: DefectSpec, L, fermi_level: float, **kwargs) -> float:
    """``J_L`` = grand-canonical supercell energy with minus without the defect."""
    return defect_energy_details(defect, L, fermi_level, **kwargs)["J"]


def _defect_point(args):
    defect, L, ef, cutoff, tol, unit_grid, options, n_extra = args
    n = None
    if n_extra is not None:
        n = int(round(np.prod(np.broadcast_to(L, (defect.host.dim,))) * defect.host.total_charge + defect.charge + n_extra))
    return defect_energy_details(defect, L, ef, cutoff, tol, unit_grid, options, n)


def defect_rate_experiment(
    defect: DefectSpec,
    L_list=(4, 6, 8, 12, 16),
    fermi_level: float | None = None,
    cutoff: float = 40.0,
    tol: float = 1e-10,
    unit_grid=None,
    options: ScfOptions = DEFECT_OPTIONS,
    p_band=(-1.5, -0.6),
    richardson_rtol: float = 0.05,
    reference_L: int | None = None,
    charged_extra_electrons: int | None = None,
    workers=None,
) -> ConvergenceReport:
    """Finite-size behaviour of the defect energy.

    ``J_inf`` is extrapolated linearly in ``1/L`` from all sizes; the records
    hold ``|J_L - J_inf|`` and an algebraic fit in ``L`` is checked against
    ``p_band``. Two extrapolations from the lower and upper halves of
    ``L_list`` are cross-checked. Optionally a larger ``reference_L`` solve
    and a fixed-count (charged) analogue are added as report-only metrics.
    """
    L_list = sorted(int(n) for n in L_list)
    if fermi_level is None:
        with labelled("host Fermi level"):
            fermi_level, _ = host_fermi_level(defect.host, 2 * max(L_list), cutoff, min(tol, 1e-10), unit_grid)
    args = [(defect, L, fermi_level, cutoff, tol, unit_grid, options, None) for L in L_list]
    out = run_points(_defect_point, args, workers, [f"L={L}" for L in L_list])
    Js = np.array([d["J"] for d, _ in out])
    inv = 1.0 / np.array(L_list, float)
    j_inf = richardson(inv, Js, (1,))
    h = len(L_list) // 2
    j_lo = richardson(inv[: max(h, 2)], Js[: max(h, 2)], (1,))
    j_hi = richardson(inv[-max(len(L_list) - h, 2):], Js[-max(len(L_list) - h, 2):], (1,))
    records = [
        Record(float(L), abs(J - j_inf), 0.0, secs, {"J": J, "n_electrons": d["n_electrons"], "net_charge": d["net_charge"], "gap": d["gap"]})
        for L, J, (d, secs) in zip(L_list, Js, out)
    ]
    metrics = {
        "fermi_level": fermi_level,
        "J_inf": j_inf,
        "J_inf_lower_half": j_lo,
        "J_inf_upper_half": j_hi,
        "richardson_disagreement": abs(j_lo - j_hi) / max(abs(j_inf), 1e-300),
        "defect_charge": defect.charge,
    }
    if reference_L is not None:
        with labelled(f"reference L={int(reference_L)}"):
            ref = defect_energy_details(defect, int(reference_L), fermi_level, cutoff, tol, unit_grid, options)
        metrics["reference_L"] = int(reference_L)
        metrics["J_reference"] = ref["J"]
        metrics["J_minus_reference"] = [float(J - ref["J"]) for J in Js]
        dev = np.abs(Js - ref["J"])
        if np.all(dev > 0):
            metrics["reference_algebraic_exponent"] = fit_rate(L_list, dev, "algebraic").exponent
            metrics["reference_exponential_rate"] = fit_rate(L_list, dev, "exponential").exponent
    if charged_extra_electrons is not None:
        cargs = [(defect, L, fermi_level, cutoff, tol, unit_grid, options, charged_extra_electrons) for L in L_list]
        cout = run_points(_defect_point, cargs, workers, [f"charged L={L}" for L in L_list])
        cj = [d["J"] for d, _ in cout]
        metrics["charged_J"] = cj
        metrics["charged_increments"] = [float(b - a) for a, b in zip(cj, cj[1:])]
        metrics["neutral_increments"] = [float(b - a) for a, b in zip(Js, Js[1:])]
    checks = [
        Check("algebraic exponent in band", "fit:defect:exponent", "in", tuple(p_band)),
        Check("richardson cross-validation", "metric:richardson_disagreement", "<", richardson_rtol),
    ]
    report = ConvergenceReport(
        "rhf-defect", records, [FitSpec("defect", "algebraic")], checks, label="toy analogue" if defect.host.dim < 3 else ""
    )
    return report.with_metrics(metrics)
