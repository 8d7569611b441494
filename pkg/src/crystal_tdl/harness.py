"""Dispatch configured experiments to their modules and emit reports."""

from __future__ import annotations

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, parse_config
from .coulomb import madelung_experiment
from .deformation import DeformationSpec, FourierMode
from .errors import CrystalTDLError
from .fields import Lattice, NuclearConfiguration
from .ksdft import XcFunctional, cb_comparison_experiment, ks_fixedpoint_experiment
from .report import ConvergenceReport, emit
from .rhf import DefectSpec, ScfOptions, defect_rate_experiment, supercell_convergence_experiment
from .tfw_experiments import (
    scaling_limit_experiment,
    symmetric_cluster_force_check,
    thermo_limit_experiment,
    vacancy_screening,
)


class ExperimentError(CrystalTDLError):
    """A module error raised while running a configured experiment.

    ``sweep_point`` names the failing point when the error came from a sweep.
    """

    def __init__(self, message, experiment=None, sweep_point=None):
        super().__init__(message)
        self.experiment = experiment
        self.sweep_point = sweep_point


def _chain(m) -> NuclearConfiguration:
    lat = Lattice.cubic(m["lattice_constant"], m.get("dim", 1))
    return NuclearConfiguration(lat, np.zeros((1, lat.dim)), m["smearing_width"])


def _scf(cfg: ExperimentConfig) -> ScfOptions:
    s = cfg.section("scf")
    return ScfOptions(beta=s["beta"], anderson_depth=s["anderson_depth"], max_iter=s["max_iter"], scheme=s["scheme"])


def _deformation(m) -> DeformationSpec:
    lat = Lattice.cubic(m["lattice_constant"], 1)
    modes = ()
    if m["amplitude"] != 0.0:
        modes = (FourierMode((m["wavenumber"],), (m["amplitude"],), m["phase"]),)
    return DeformationSpec(lat, [[m["affine"]]], modes)


def _ints(v):
    return None if v is None else tuple(int(x) for x in v)


def _run_tfw_thermo(cfg, workers):
    m, sw, t, a = (cfg.section(s) for s in ("model", "sweep", "tolerances", "acceptance"))
    return thermo_limit_experiment(
        Lattice.cubic(m["lattice_constant"]), sw["radii"], m["smearing_width"], m["points_per_cell"], m["buffer"],
        m["window_ratio"], t["tol"], a["r2_min"], workers, cfg.seed,
    )


def _run_tfw_scaling(cfg, workers):
    m, sw, t, a = (cfg.section(s) for s in ("model", "sweep", "tolerances", "acceptance"))
    return scaling_limit_experiment(
        _deformation(m), sw["eps"], m["smearing_width"], m["points_per_cell"], t["tol"], a["p_band"], a["r2_min"],
        t["floor"], m["quad_points"], m["cheb_nodes"], workers,
    )


def _run_tfw_screening(cfg, workers):
    m, t, a = (cfg.section(s) for s in ("model", "tolerances", "acceptance"))
    return vacancy_screening(m["supercell"], m["lattice_constant"], m["smearing_width"], m["points_per_cell"], t["tol"],
                             m["fit_min"], cfg.seed, a["far_ratio_max"])


def _run_tfw_forces(cfg, workers):
    m, t, a = (cfg.section(s) for s in ("model", "tolerances", "acceptance"))
    return symmetric_cluster_force_check(m["radius"], m["smearing_width"], m["points_per_cell"], m["buffer"], m["step"],
                                         t["tol"], cfg.seed, a["r2_min"], a["force_factor"])


def _run_rhf_supercell(cfg, workers):
    m, sw, t, a = (cfg.section(s) for s in ("model", "sweep", "tolerances", "acceptance"))
    return supercell_convergence_experiment(
        _chain(m), sw["L"], sw["L_ref"], m["cutoff"], t["tol"], _ints(m["unit_grid"]), _scf(cfg), a["r2_min"],
        sw["equivalence_L"], (t["equivalence_energy"], t["equivalence_density"]), workers,
    )


def _run_rhf_defect(cfg, workers):
    m, sw, t, a = (cfg.section(s) for s in ("model", "sweep", "tolerances", "acceptance"))
    host = _chain({**m, "dim": 1})
    defect = DefectSpec(host, tuple(m["removed"] or ()), tuple(m["added"] or ()))
    return defect_rate_experiment(
        defect, sw["L"], m["fermi_level"], m["cutoff"], t["tol"], _ints(m["unit_grid"]), _scf(cfg), a["p_band"],
        a["richardson_rtol"], sw["reference_L"], None, workers,
    )


def _run_ks_fixedpoint(cfg, workers):
    m, t, a = (cfg.section(s) for s in ("model", "tolerances", "acceptance"))
    return ks_fixedpoint_experiment(
        _chain({**m, "dim": 1}), XcFunctional(c_d=m["c_d"]), m["kgrid"], m["cutoff"], t["tol"], m["n_modes"], cfg.seed,
        t["reduction_tol"], t["residual_max"], a["sigma_floor"], _scf(cfg),
    )


def _run_ks_cb(cfg, workers):
    m, sw, t, a = (cfg.section(s) for s in ("model", "sweep", "tolerances", "acceptance"))
    return cb_comparison_experiment(
        _deformation(m), _chain({**m, "dim": 1}), XcFunctional(c_d=m["c_d"]), sw["eps"], m["cutoff"], None, t["tol"],
        m["nodes"], m["max_n"], a["min_exponent"], t["floor"], _scf(cfg), workers,
    )


def _run_madelung(cfg, workers):
    m, sw, t = (cfg.section(s) for s in ("model", "sweep", "tolerances"))
    B = np.array(m["lattice_vectors"], float).reshape(3, 3).T  # given column by column
    return madelung_experiment(Lattice(B), sw["etas"], sw["scales"], t["tol"], t["eta_tol"], t["scaling_tol"])


RUNNERS = {
    "tfw-thermo": _run_tfw_thermo,
    "tfw-scaling": _run_tfw_scaling,
    "tfw-screening": _run_tfw_screening,
    "tfw-forces": _run_tfw_forces,
    "rhf-supercell": _run_rhf_supercell,
    "rhf-defect": _run_rhf_defect,
    "ks-fixedpoint": _run_ks_fixedpoint,
    "ks-cb": _run_ks_cb,
    "madelung": _run_madelung,
}


def provenance(cfg: ExperimentConfig, extra: dict | None = None) -> dict:
    prov = dict(extra or {})
    prov.update({"config_hash": cfg.sha256, "version": __version__, "seed": cfg.seed, "config": cfg.canonical()})
    prov.setdefault("grid_sizes", {})
    return prov


def run(config, out_dir=None, workers: int | None = None, seed: int | None = None) -> ConvergenceReport:
    """Execute a configured experiment; writes the report when ``out_dir`` (or the config's) is set.

    ``config`` is an ``ExperimentConfig``, a path, or INI text. ``seed``
    overrides the configured seed. Passing ``out_dir=False`` skips emission.
    """
    if isinstance(config, ExperimentConfig):
        cfg = config
    elif isinstance(config, str) and "\n" in config:
        cfg = parse_config(config)
    else:
        cfg = load_config(config)
    if seed is not None:
        cfg = ExperimentConfig(cfg.experiment, cfg.params, int(seed), cfg.workers, cfg.out_dir, cfg.formats, cfg.source)
    if workers is None and cfg.workers > 0:
        workers = cfg.workers
    try:
        report = RUNNERS[cfg.experiment](cfg, workers)
    except CrystalTDLError as exc:
        point = getattr(exc, "sweep_point", None)
        where = f" at sweep point {point}" if point is not None else ""
        raise ExperimentError(f"{cfg.experiment}{where}: {type(exc).__name__}: {exc}", cfg.experiment, point) from exc
    report.provenance = provenance(cfg, report.provenance)
    if out_dir is not False:
        emit(report, out_dir or cfg.out_dir, cfg.formats)
    return report


def validate(config) -> ExperimentConfig:
    """Parse and check a configuration without running anything."""
    if isinstance(config, ExperimentConfig):
        return config
    return parse_config(config) if isinstance(config, str) and "\n" in config else load_config(config)


def reevaluate(report_json: str) -> list:
    """Recompute every check of a written report from its records and metrics."""
    return ConvergenceReport.from_json(report_json).evaluate()
