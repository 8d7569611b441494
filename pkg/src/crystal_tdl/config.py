"""Strict INI experiment configuration.

Grammar (``configparser`` without interpolation, duplicate keys rejected)::

    [experiment]        name = <one of EXPERIMENTS>, seed = int, workers = int
    [model]             physical and discretisation parameters
    [scf]               mixing parameters (solver experiments only)
    [sweep]             comma separated lists; fractions such as 1/2 allowed
    [tolerances]        strictly positive numbers
    [acceptance]        pass/fail bands (a band is ``lo, hi``)
    [output]            dir = path, formats = json, csv

Every key is declared in ``SCHEMAS``; unknown sections or keys, empty sweeps,
non-positive tolerances and malformed values raise ``ConfigError``. Missing
keys take the shipped defaults, which match the acceptance targets.
An empty value for an optional key means "automatic".
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError

EXPERIMENTS = (
    "tfw-thermo",
    "tfw-scaling",
    "tfw-screening",
    "tfw-forces",
    "rhf-supercell",
    "rhf-defect",
    "ks-fixedpoint",
    "ks-cb",
    "madelung",
)

# value kinds: float, int, str, floats, ints, strs, fracs (floats, a/b allowed), band (2 floats),
# a trailing "?" marks an optional value (empty -> None)

_SCF = {"beta": ("float", 0.3), "anderson_depth": ("int", 5), "max_iter": ("int", 400), "scheme": ("str", "anderson")}
_DEFECT_SCF = {**_SCF, "max_iter": ("int", 1000), "scheme": ("str", "oda")}

SCHEMAS = {
    "tfw-thermo": {
        "model": {"lattice_constant": ("float", 1.0), "smearing_width": ("float", 0.5), "points_per_cell": ("int", 6),
                  "buffer": ("float", 2.0), "window_ratio": ("float", 0.5)},
        "sweep": {"radii": ("floats", (3.0, 4.0, 5.0, 6.0))},
        "tolerances": {"tol": ("float", 1e-9)},
        "acceptance": {"r2_min": ("float", 0.9)},
    },
    "tfw-scaling": {
        "model": {"lattice_constant": ("float", 4.0), "smearing_width": ("float", 1.2), "points_per_cell": ("int", 64),
                  "affine": ("float", 0.0), "amplitude": ("float", 0.2), "wavenumber": ("int", 1),
                  "phase": ("float", 0.2 * math.pi), "quad_points": ("int", 256), "cheb_nodes": ("int", 20)},
        "sweep": {"eps": ("fracs", (1 / 2, 1 / 3, 1 / 4, 1 / 5, 1 / 6, 1 / 7, 1 / 8))},
        "tolerances": {"tol": ("float", 1e-10), "floor": ("float", 1e-8)},
        "acceptance": {"p_band": ("band", (1.7, 2.3)), "r2_min": ("float", 0.95)},
    },
    "tfw-screening": {
        "model": {"lattice_constant": ("float", 1.0), "smearing_width": ("float", 0.5), "points_per_cell": ("int", 6),
                  "supercell": ("int", 7), "fit_min": ("float", 1.0)},
        "tolerances": {"tol": ("float", 1e-9)},
        "acceptance": {"far_ratio_max": ("float", 0.1)},
    },
    "tfw-forces": {
        "model": {"radius": ("float", 2.0), "smearing_width": ("float", 0.5), "points_per_cell": ("int", 6),
                  "buffer": ("float", 2.0), "step": ("float", 1e-3)},
        "tolerances": {"tol": ("float", 1e-9)},
        "acceptance": {"r2_min": ("float", 0.85), "force_factor": ("float", 10.0)},
    },
    "rhf-supercell": {
        "model": {"dim": ("int", 1), "lattice_constant": ("float", 3.0), "smearing_width": ("float", 0.6),
                  "cutoff": ("float", 40.0), "unit_grid": ("ints?", None)},
        "scf": _SCF,
        "sweep": {"L": ("ints", (1, 2, 3, 4, 5, 6)), "L_ref": ("int", 12), "equivalence_L": ("ints", (2, 3))},
        "tolerances": {"tol": ("float", 1e-11), "equivalence_energy": ("float", 1e-9),
                       "equivalence_density": ("float", 1e-8)},
        "acceptance": {"r2_min": ("float", 0.9)},
    },
    "rhf-defect": {
        "model": {"lattice_constant": ("float", 3.0), "smearing_width": ("float", 0.6), "cutoff": ("float", 40.0),
                  "unit_grid": ("ints?", None), "removed": ("floats?", (0.0,)), "added": ("floats?", None),
                  "fermi_level": ("float?", None)},
        "scf": _DEFECT_SCF,
        "sweep": {"L": ("ints", (4, 6, 8, 12, 16)), "reference_L": ("int?", 32)},
        "tolerances": {"tol": ("float", 1e-10)},
        "acceptance": {"p_band": ("band", (-1.5, -0.6)), "richardson_rtol": ("float", 0.05)},
    },
    "ks-fixedpoint": {
        "model": {"lattice_constant": ("float", 3.0), "smearing_width": ("float", 0.6), "cutoff": ("float", 40.0),
                  "kgrid": ("int", 8), "c_d": ("float", 0.7386), "n_modes": ("int", 20)},
        "scf": _SCF,
        "tolerances": {"tol": ("float", 1e-10), "reduction_tol": ("float", 1e-7), "residual_max": ("float", 1e-8)},
        "acceptance": {"sigma_floor": ("float", 0.0)},
    },
    "ks-cb": {
        "model": {"lattice_constant": ("float", 3.0), "smearing_width": ("float", 0.6), "cutoff": ("float", 40.0),
                  "c_d": ("float", 0.7386), "affine": ("float", 0.0), "amplitude": ("float", 0.02),
                  "wavenumber": ("int", 1), "phase": ("float", 0.0), "nodes": ("int", 12), "max_n": ("int", 16)},
        "scf": _SCF,
        "sweep": {"eps": ("fracs", (1 / 2, 1 / 4, 1 / 8))},
        "tolerances": {"tol": ("float", 1e-10), "floor": ("float", 1e-7)},
        "acceptance": {"min_exponent": ("float", 0.3)},
    },
    "madelung": {
        "model": {"lattice_vectors": ("floats", (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0))},
        "sweep": {"etas": ("floats", (1.0, 1.5, 2.0, 3.0)), "scales": ("floats", (0.5, 2.0, 3.0))},
        "tolerances": {"tol": ("float", 1e-13), "eta_tol": ("float", 1e-8), "scaling_tol": ("float", 1e-10)},
        "acceptance": {},
    },
}

_EXPERIMENT_KEYS = {"name", "seed", "workers"}
_OUTPUT = {"dir": ("str", "reports"), "formats": ("strs", ("json", "csv"))}
_FORMATS = {"json", "csv"}


def _convert(kind: str, raw: str, where: str):
    optional = kind.endswith("?")
    kind = kind.rstrip("?")
    raw = raw.strip()
    if raw == "":
        if optional:
            return None
        if kind in ("floats", "ints", "fracs", "strs"):
            raise ConfigError(f"{where}: sweep list must not be empty")
        raise ConfigError(f"{where}: value required")
    try:
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "int":
            return int(raw)
        if kind == "str":
            return raw
        parts = [p.strip() for p in raw.split(",")]
        if any(p == "" for p in parts):
            raise ValueError
        if kind == "strs":
            return tuple(parts)
        if kind == "ints":
            return tuple(int(p) for p in parts)
        if kind in ("floats", "band"):
            vals = tuple(float(p) for p in parts)
        elif kind == "fracs":
            vals = tuple(float(Fraction(p)) for p in parts)
        else:
            raise ConfigError(f"{where}: unknown value kind {kind!r}")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError
        if kind == "band" and (len(vals) != 2 or vals[0] > vals[1]):
            raise ConfigError(f"{where}: a band is 'lo, hi' with lo <= hi")
        return vals
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: dict
    seed: int = 0
    workers: int = 0  # 0: take the worker count from the environment
    out_dir: str = "reports"
    formats: tuple = ("json", "csv")
    source: str = field(default="", compare=False, repr=False)

    def section(self, name: str) -> dict:
        return self.params.get(name, {})

    def canonical(self) -> dict:
        """Resolved configuration without output locations (what the hash covers)."""
        return {"experiment": self.experiment, "seed": self.seed, "params": _jsonable(self.params)}

    @property
    def sha256(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def to_ini(self) -> str:
        lines = ["[experiment]", f"name = {self.experiment}", f"seed = {self.seed}", f"workers = {self.workers}", ""]
        for sec, vals in self.params.items():
            lines.append(f"[{sec}]")
            for k, v in vals.items():
                lines.append(f"{k} = {_format(v)}")
            lines.append("")
        lines += ["[output]", f"dir = {self.out_dir}", f"formats = {', '.join(self.formats)}", ""]
        return "\n".join(lines)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def defaults(experiment: str) -> dict:
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMAS[experiment].items()}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False,
                                   inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    exp = cp["experiment"]
    unknown = set(exp) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"[experiment]: unknown keys {sorted(unknown)}")
    if "name" not in exp:
        raise ConfigError("[experiment]: 'name' is required")
    name = exp["name"].strip()
    schema = SCHEMAS.get(name)
    if schema is None:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    seed = _convert("int", exp.get("seed", "0"), "[experiment] seed")
    workers = _convert("int", exp.get("workers", "0"), "[experiment] workers")
    if workers < 0:
        raise ConfigError("[experiment] workers must be >= 0")

    allowed = set(schema) | {"experiment", "output"}
    extra = [s for s in cp.sections() if s not in allowed]
    if extra:
        raise ConfigError(f"sections {extra} are not used by {name}")

    params = {}
    for sec, keys in schema.items():
        given = cp[sec] if sec in cp else {}
        unknown = set(given) - set(keys)
        if unknown:
            raise ConfigError(f"[{sec}]: unknown keys {sorted(unknown)} for {name}")
        vals = {}
        for k, (kind, default) in keys.items():
            vals[k] = _convert(kind, given[k], f"[{sec}] {k}") if k in given else default
        params[sec] = vals
    for k, v in params.get("tolerances", {}).items():
        if v is None or v <= 0:
            raise ConfigError(f"[tolerances] {k} must be positive, got {v}")

    out = cp["output"] if "output" in cp else {}
    unknown = set(out) - set(_OUTPUT)
    if unknown:
        raise ConfigError(f"[output]: unknown keys {sorted(unknown)}")
    out_dir = _convert("str", out["dir"], "[output] dir") if "dir" in out else _OUTPUT["dir"][1]
    formats = _convert("strs", out["formats"], "[output] formats") if "formats" in out else _OUTPUT["formats"][1]
    if not set(formats) <= _FORMATS:
        raise ConfigError(f"[output] formats must be drawn from {sorted(_FORMATS)}")
    cfg = ExperimentConfig(name, params, seed, workers, out_dir, tuple(formats), text)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return parse_config(text)


def _validate(cfg: ExperimentConfig) -> None:
    """Experiment-specific consistency rules beyond the per-key types."""
    m, sw = cfg.section("model"), cfg.section("sweep")
    for k in ("lattice_constant", "smearing_width", "cutoff", "radius", "step"):
        if k in m and m[k] <= 0:
            raise ConfigError(f"[model] {k} must be positive")
    for k in ("points_per_cell", "kgrid", "supercell", "n_modes", "nodes", "max_n", "quad_points", "cheb_nodes"):
        if k in m and m[k] < 1:
            raise ConfigError(f"[model] {k} must be at least 1")
    if "eps" in sw:
        for e in sw["eps"]:
            n = 1 / e if e > 0 else -1
            if e <= 0 or abs(n - round(n)) > 1e-9:
                raise ConfigError(f"[sweep] eps entries must be 1/n, got {e}")
    for k in ("L", "equivalence_L", "radii", "etas", "scales"):
        if k in sw and any(v <= 0 for v in sw[k]):
            raise ConfigError(f"[sweep] {k} entries must be positive")
    if cfg.experiment in ("tfw-scaling", "tfw-screening", "rhf-defect", "rhf-supercell", "tfw-thermo") and "L" in sw:
        if len(sw["L"]) < 3:
            raise ConfigError("[sweep] L needs at least three sizes for a rate fit")
    if cfg.experiment == "madelung" and len(m["lattice_vectors"]) != 9:
        raise ConfigError("[model] lattice_vectors must hold nine numbers (three columns)")
    if "scf" in cfg.params:
        s = cfg.params["scf"]
        if not 0 < s["beta"] <= 1:
            raise ConfigError("[scf] beta must lie in (0, 1]")
        if s["scheme"] not in ("anderson", "oda"):
            raise ConfigError("[scf] scheme must be anderson or oda")
        if s["anderson_depth"] < 0 or s["max_iter"] < 1:
            raise ConfigError("[scf] anderson_depth >= 0 and max_iter >= 1 required")
