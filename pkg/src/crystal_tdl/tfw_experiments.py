"""TFW experiments: thermodynamic limit, screening, force locality, scaling limit."""

from __future__ import annotations

import functools

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from .deformation import DeformationSpec
from .errors import PreconditionError, StepError
from .fields import Lattice, NuclearConfiguration
from .report import Check, ConvergenceReport, FitSpec, Record
from .sweep import labelled, run_points
from .tfw import (
    TfwOptions,
    energy_density,
    periodic_crystal,
    tfw_ground_state_cluster,
    tfw_ground_state_periodic,
)


def _opts(tol, seed=0):
    return TfwOptions(tol=tol, seed=seed)


# -- thermodynamic limit ------------------------------------------------------


def cluster_in_ball(lattice: Lattice, radius: float, buffer: float, points_per_cell: int):
    """Lattice points within ``radius`` of the origin, placed in a box made of whole cells.

    Returns ``(config_points, box, cells_per_axis, centre)`` with positions in box
    coordinates; the origin lattice point sits at ``centre``. Nuclei sit half a
    grid step off the grid so that the box grid (indices ``0..N-1``) is mirror
    symmetric about the central nucleus.
    """
    inv = lattice.inverse
    M = np.ceil((radius + buffer) * np.linalg.norm(inv, axis=1) - 1e-9).astype(int)
    ranges = [np.arange(-m, m + 1) for m in M]
    n = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, lattice.dim)
    pts = lattice.to_cartesian(n)
    pts = pts[np.linalg.norm(pts, axis=1) <= radius + 1e-9]
    shift = lattice.to_cartesian(M - 0.5 / points_per_cell)
    box = lattice.supercell(2 * M)
    return pts + shift, box, tuple(int(2 * m) for m in M), shift


def _tile(values, shape):
    idx = [np.arange(n) % m for n, m in zip(shape, values.shape)]
    return values[np.ix_(*idx)]


def _thermo_point(args):
    (B, radius, width, ppc, buffer, ratio, tol, u_per, V_per, seed) = args
    lattice = Lattice(B)
    pts, box, cells, centre = cluster_in_ball(lattice, radius, buffer, ppc)
    shape = tuple(c * ppc for c in cells)
    cfg = NuclearConfiguration(None, pts, width)
    state = tfw_ground_state_cluster(cfg, float(len(pts)), box, shape, options=_opts(tol, seed))
    grid_pts = state.u.grid.points
    r = np.sqrt(sum((grid_pts[c] - centre[c]) ** 2 for c in range(3)))
    window = r <= ratio * radius + 1e-9
    du = np.abs(state.u.values - _tile(u_per, shape))[window]
    dV = np.abs(state.full_potential().values - _tile(V_per, shape))[window]
    return {
        "err": float((du + dV).max()),
        "err_u": float(du.max()),
        "err_V": float(dV.max()),
        "min_u": float(state.u.values[window].min()),
        "n_nuclei": len(pts),
        "theta": state.theta,
        "energy": state.energy,
        "residual": state.residual,
        "grid": list(shape),
    }


def thermo_limit_experiment(
    lattice: Lattice | None = None,
    radii=(3, 4, 5, 6),
    smearing_width: float = 0.5,
    points_per_cell: int = 6,
    buffer: float = 2.0,
    window_ratio: float = 0.5,
    tol: float = 1e-9,
    r2_min: float = 0.9,
    workers: int | None = None,
    seed: int = 0,
) -> ConvergenceReport:
    """Growing balls of a crystal compared with the periodic solution on an inner window.

    The cluster grids are aligned with the unit-cell grid so the periodic state is
    compared point by point. The window radius is ``window_ratio * r_N`` and the
    error (``max |u_N - u| + |V_N - V|`` with the chemical potential absorbed
    into both potentials) is fitted against ``r_N - r'``.
    """
    lattice = lattice or Lattice.cubic(1.0)
    if lattice.dim != 3:
        raise PreconditionError("the thermodynamic-limit experiment is three-dimensional")
    shape = (points_per_cell,) * 3
    # same half-step offset between nucleus and grid as in the clusters
    offset = lattice.to_cartesian(np.full(3, 1 - 0.5 / points_per_cell))
    per_cfg = NuclearConfiguration(lattice, offset[None, :], smearing_width)
    with labelled("periodic reference"):
        per = tfw_ground_state_periodic(lattice, per_cfg, shape, options=_opts(tol * 0.1, seed))
    u_per, V_per = per.u.values, per.full_potential().values
    items = [
        (lattice.B, float(r), smearing_width, points_per_cell, buffer, window_ratio, tol, u_per, V_per, seed)
        for r in sorted(radii)
    ]
    records = []
    grids = {"periodic": list(shape)}
    for r, (out, secs) in zip(sorted(radii), run_points(_thermo_point, items, workers, [f"r={r:g}" for r in sorted(radii)])):
        grids[f"r={r:g}"] = out.pop("grid")
        records.append(
            Record(float(r), out.pop("err"), out.pop("residual"), secs, {"distance": float(r) * (1 - window_ratio), **out})
        )
    checks = [
        Check("exponential decay", "fit:window:exponent", ">", 0.0),
        Check("fit quality", "fit:window:r_squared", ">", r2_min),
        Check("positive density in window", "records:min:min_u", ">", 0.0),
    ]
    return ConvergenceReport(
        "tfw-thermo",
        records,
        [FitSpec("window", "exponential", x="distance", y="value")],
        checks,
        {"grid_sizes": grids, "periodic_energy": per.energy, "periodic_theta": per.theta},
    )


# -- screening ----------------------------------------------------------------


def _min_image_distance(lattice: Lattice, pts: np.ndarray, centre) -> np.ndarray:
    d = [pts[c] - centre[c] for c in range(lattice.dim)]
    disp = np.stack(d, -1)
    frac = lattice.to_fractional(disp)
    frac -= np.round(frac)
    return np.linalg.norm(lattice.to_cartesian(frac), axis=-1)


def _center_set_difference(a: np.ndarray, b: np.ndarray, lattice: Lattice | None, tol=1e-9):
    """Rows of ``a`` with no match in ``b`` (periodic match if ``lattice``)."""
    out = []
    for p in a:
        d = b - p
        if lattice is not None:
            f = lattice.to_fractional(d)
            d = lattice.to_cartesian(f - np.round(f))
        if len(b) == 0 or np.linalg.norm(d, axis=1).min() > tol:
            out.append(p)
    return np.array(out).reshape(-1, a.shape[1])


def screening_experiment(
    config: NuclearConfiguration,
    perturbed_config: NuclearConfiguration,
    defect_center,
    defect_radius: float,
    grid_shape,
    tol: float = 1e-9,
    shell_width: float = 0.5,
    fit_min: float = 1.0,
    seed: int = 0,
    far_ratio_max: float = 0.1,
) -> ConvergenceReport:
    """Decay of the ground-state change caused by a local change of the nuclei.

    Both configurations are periodic on the same (super)cell and neutral. The
    report holds shell maxima of ``|u - u*| + |V - V*|`` around the defect and
    the far-field ratio ``max |V - V*| * r / |Q|`` on each shell.
    """
    if not (config.periodic and perturbed_config.periodic) or config.lattice != perturbed_config.lattice:
        raise PreconditionError("screening runs need two periodic configurations on the same supercell")
    lattice = config.lattice
    centre = np.asarray(defect_center, float)
    changed = np.vstack(
        [
            _center_set_difference(config.centers, perturbed_config.centers, lattice),
            _center_set_difference(perturbed_config.centers, config.centers, lattice),
        ]
    )
    if len(changed):
        dist = _min_image_distance(lattice, changed.T, centre)
        if dist.max() > defect_radius + 1e-9:
            raise PreconditionError(f"configurations differ at distance {dist.max():.3g} > {defect_radius}")
    Q = perturbed_config.total_charge - config.total_charge
    opts = _opts(tol, seed)
    with labelled("perfect crystal"):
        s0 = tfw_ground_state_periodic(lattice, config, grid_shape, options=opts)
    with labelled("perturbed crystal"):
        s1 = tfw_ground_state_periodic(lattice, perturbed_config, grid_shape, options=opts)
    du = np.abs(s1.u.values - s0.u.values)
    dV = np.abs(s1.full_potential().values - s0.full_potential().values)
    r = _min_image_distance(lattice, s0.u.grid.points, centre)
    # largest ball around the defect that contains no periodic image
    r_max = 0.5 * min(np.linalg.norm(lattice.B, axis=0))
    edges = np.arange(0.0, r_max + 1e-9, shell_width)
    records = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (r >= lo) & (r < hi)
        if not m.any():
            continue
        val = float((du + dV)[m].max())
        dv = float(dV[m].max())
        ratio = dv * hi / abs(Q) if Q != 0 else 0.0
        records.append(
            Record(0.5 * (lo + hi), max(val, 1e-300), 0.0, 0.0, {"du": float(du[m].max()), "dV": dv, "far_ratio": ratio, "fit": float(lo >= fit_min)})
        )
    fit_records = [rec for rec in records if rec.extras["fit"] > 0]
    for rec in records:
        rec.extras.pop("fit")
    return ConvergenceReport(
        "tfw-screening",
        fit_records,
        [FitSpec("shells", "exponential")],
        [
            Check("exponential decay", "fit:shells:exponent", ">", 0.0),
            Check("screened far field", "records:last:far_ratio", "<", far_ratio_max),
        ],
        {
            "grid_sizes": {"supercell": list(grid_shape)},
            "defect_charge": Q,
            "residuals": [s0.residual, s1.residual],
        },
    ).with_metrics({"inner_shells": [[rec.parameter, rec.value] for rec in records if rec not in fit_records]})


def vacancy_screening(
    supercell: int = 7,
    lattice_constant: float = 1.0,
    smearing_width: float = 0.5,
    points_per_cell: int = 6,
    tol: float = 1e-9,
    fit_min: float = 1.0,
    seed: int = 0,
    far_ratio_max: float = 0.1,
) -> ConvergenceReport:
    """Central vacancy in a periodic ``supercell^3`` block of a simple cubic crystal."""
    L = supercell
    lat = Lattice.cubic(lattice_constant * L)
    n = np.stack(np.meshgrid(*[np.arange(L)] * 3, indexing="ij"), -1).reshape(-1, 3)
    pts = lattice_constant * n
    centre = lattice_constant * np.array([L // 2] * 3, float)
    keep = np.linalg.norm(pts - centre, axis=1) > 1e-9
    host = NuclearConfiguration(lat, pts, smearing_width)
    vac = NuclearConfiguration(lat, pts[keep], smearing_width)
    rep = screening_experiment(host, vac, centre, 0.5 * lattice_constant, (L * points_per_cell,) * 3, tol, fit_min=fit_min, seed=seed,
                               far_ratio_max=far_ratio_max)
    rep.label = f"vacancy in {L}^3 supercell"
    return rep


# -- force locality -----------------------------------------------------------


def _shell_maxima(values, r, width, r_max):
    edges = np.arange(0.0, r_max + 1e-9, width)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (r >= lo) & (r < hi)
        if m.any():
            out.append((0.5 * (lo + hi), float(values[m].max())))
    return out


def force_locality_check(
    state,
    nucleus_index: int,
    h: float = 1e-3,
    tol: float | None = None,
    shell_width: float = 0.5,
    fit_min: float = 1.0,
    r2_min: float = 0.85,
) -> ConvergenceReport:
    """Sensitivity of the energy density to moving one nucleus of a cluster.

    ``d E(r) / d R`` is taken by central differences (six re-solves warm-started
    from ``state``). Shell maxima of its norm around the nucleus are fitted with
    an exponential; the total-energy force on the nucleus is reported too.
    """
    if state.periodic:
        raise PreconditionError("force locality is measured on cluster states")
    tol = state.residual * 10 if tol is None else tol
    tol = max(tol, 1e-10)
    if h <= 1e3 * tol:
        raise StepError(f"step h={h:g} is within the solver noise (tol={tol:g}); use h > {1e3 * tol:g}")
    cfg = state.config
    box, shape = state.u.lattice, state.u.grid_shape
    R = cfg.centers[nucleus_index]
    dens, energies = [], []
    for axis in range(3):
        pair, en = [], []
        for sgn in (1.0, -1.0):
            centers = cfg.centers.copy()
            centers[nucleus_index, axis] += sgn * h
            s = tfw_ground_state_cluster(cfg.with_centers(centers), cfg.total_charge, box, shape, options=_opts(tol), init=state.u.values)
            pair.append(energy_density(s).values.values)
            en.append(s.energy)
        dens.append((pair[0] - pair[1]) / (2 * h))
        energies.append((en[0] - en[1]) / (2 * h))
    grad_norm = np.sqrt(sum(d**2 for d in dens))
    pts = state.u.grid.points
    r = np.sqrt(sum((pts[c] - R[c]) ** 2 for c in range(3)))
    # distance to the nearest box face bounds the usable radius
    r_max = float(min(min(R), *(np.linalg.norm(box.B, axis=0) - R)))
    shells = _shell_maxima(grad_norm, r, shell_width, r_max)
    records = [Record(mid, val, 0.0, 0.0, {}) for mid, val in shells if mid - 0.5 * shell_width >= fit_min]
    force = -np.array(energies)
    return ConvergenceReport(
        "tfw-forces",
        records,
        [FitSpec("shells", "exponential")],
        [
            Check("exponential decay", "fit:shells:exponent", ">", 0.0),
            Check("fit quality", "fit:shells:r_squared", ">", r2_min),
            Check("shell maxima decrease", "records:monotone:value", ">=", 1.0),
        ],
        {"grid_sizes": {"box": list(shape)}, "step": h, "tol": tol, "nucleus": int(nucleus_index)},
        label="energy-density sensitivity",
    ).with_metrics({"force_norm": float(np.linalg.norm(force)), "force": force.tolist(),
                    "inner_shells": [[m, v] for m, v in shells if m - 0.5 * shell_width < fit_min]})


def symmetric_cluster_force_check(radius: float = 2.0, smearing_width: float = 0.5, points_per_cell: int = 6,
                                  buffer: float = 2.0, h: float = 1e-3, tol: float = 1e-9, seed: int = 0,
                                  r2_min: float = 0.85, force_factor: float = 10.0):
    """Force-locality run on the central nucleus of a ball-shaped simple cubic cluster."""
    lattice = Lattice.cubic(1.0)
    pts, box, cells, centre = cluster_in_ball(lattice, radius, buffer, points_per_cell)
    shape = tuple(c * points_per_cell for c in cells)
    cfg = NuclearConfiguration(None, pts, smearing_width)
    state = tfw_ground_state_cluster(cfg, float(len(pts)), box, shape, options=_opts(tol, seed))
    idx = int(np.argmin(np.linalg.norm(pts - centre, axis=1)))
    rep = force_locality_check(state, idx, h=h, tol=tol, r2_min=r2_min)
    rep.metrics["tol"] = tol
    rep.checks.append(Check("no force on the symmetric centre", "metric:force_norm", "<", force_factor * tol))
    return rep


# -- Cauchy-Born scaling limit -----------------------------------------------


class CauchyBornTable:
    """``W(F) = W_cb(F B)`` for scalar strains in one dimension, by Chebyshev interpolation."""

    def __init__(self, lattice: Lattice, smearing_width, points_per_cell, lo, hi, nodes=20, tol=1e-10):
        self.lattice, self.width, self.ppc, self.tol = lattice, smearing_width, points_per_cell, tol
        k = np.arange(nodes)
        self.nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (2 * k + 1) / (2 * nodes))
        self.values = np.array([self.exact(F) for F in self.nodes])
        self._interp = BarycentricInterpolator(self.nodes, self.values)

    @functools.lru_cache(maxsize=256)
    def exact(self, F: float) -> float:
        lat = Lattice(F * self.lattice.B)
        s = tfw_ground_state_periodic(lat, periodic_crystal(lat, self.width), (self.ppc,), options=_opts(self.tol))
        return energy_density(s).total()

    def __call__(self, F):
        return self._interp(np.asarray(F, float))


def _supercell_energy(deform: DeformationSpec, width, ppc, tol):
    cell, pos = deform.supercell()
    cfg = NuclearConfiguration(cell, pos, width)
    shape = tuple(deform.n * ppc for _ in range(deform.dim))
    s = tfw_ground_state_periodic(cell, cfg, shape, options=_opts(tol))
    return energy_density(s).total() / deform.n**deform.dim, s.residual


def continuum_energy(deform: DeformationSpec, W, quad_points: int = 256) -> float:
    """Cell average of ``W(grad Y)`` by the (spectrally accurate) periodic trapezoid rule."""
    d = deform.dim
    s = np.stack(np.meshgrid(*[np.arange(quad_points) / quad_points] * d, indexing="ij"), -1).reshape(-1, d)
    grads = deform.gradient(deform.lattice.to_cartesian(s))
    return float(np.mean(W(grads)))


def scaling_limit_experiment(
    deform: DeformationSpec,
    eps_list=(1 / 2, 1 / 3, 1 / 4, 1 / 5, 1 / 6, 1 / 7, 1 / 8),
    smearing_width: float = 1.2,
    points_per_cell: int = 64,
    tol: float = 1e-10,
    p_band=(1.7, 2.3),
    r2_min: float = 0.95,
    floor: float = 1e-8,
    quad_points: int = 256,
    cheb_nodes: int = 20,
    workers: int | None = None,
) -> ConvergenceReport:
    """Compare the deformed-crystal energy per reference cell with the averaged Cauchy-Born energy.

    ``E_eps`` is the supercell energy divided by ``n^d``; the continuum value
    is the cell average of ``W_cb((I + grad u(x)) B)``.
    """
    lattice = deform.lattice
    d = lattice.dim
    if d == 1:
        s = np.arange(quad_points) / quad_points
        F = deform.gradient(lattice.to_cartesian(s[:, None]))[:, 0, 0]
        lo, hi = F.min(), F.max()
        if hi - lo < 1e-12:
            table = CauchyBornTable.__new__(CauchyBornTable)
            table.lattice, table.width, table.ppc, table.tol = lattice, smearing_width, points_per_cell, tol * 0.1
            W = lambda G: np.full(len(G), table.exact(float(lo)))
        else:
            pad = 0.02 * (hi - lo)
            table = CauchyBornTable(lattice, smearing_width, points_per_cell, lo - pad, hi + pad, cheb_nodes, tol * 0.1)
            W = lambda G: table(G[:, 0, 0])
    else:
        cache = {}

        def W(G):
            out = []
            for g in G:
                key = np.round(g, 14).tobytes()
                if key not in cache:
                    from .tfw import cauchy_born_energy

                    cache[key] = cauchy_born_energy(g @ lattice.B, smearing_width, (points_per_cell,) * d, tol * 0.1)
                out.append(cache[key])
            return np.array(out)

    cont = continuum_energy(deform, W, quad_points)
    eps_sorted = sorted(eps_list)
    items = [deform.with_epsilon(e) for e in eps_sorted]
    fn = functools.partial(_scaling_point, width=smearing_width, ppc=points_per_cell, tol=tol)
    records = []
    for e, ((E, res), secs) in zip(eps_sorted, run_points(fn, items, workers, [f"eps={e:g}" for e in eps_sorted])):
        records.append(Record(float(e), abs(E - cont), res, secs, {"E_eps": E, "continuum": cont}))
    trivial = deform.is_trivial()
    if trivial:
        specs, checks = [], [Check("homogeneous deformation at floor", "records:max:value", "<", floor)]
    else:
        specs = [FitSpec("eps", "algebraic")]
        checks = [
            Check("second-order rate", "fit:eps:exponent", "in", tuple(p_band)),
            Check("fit quality", "fit:eps:r_squared", ">", r2_min),
        ]
    return ConvergenceReport(
        "tfw-scaling",
        records,
        specs,
        checks,
        {"grid_sizes": {"per_cell": points_per_cell, "supercells": [int(round(1 / e)) * points_per_cell for e in eps_sorted]}},
    )


def _scaling_point(deform, width, ppc, tol):
    return _supercell_energy(deform, width, ppc, tol)
