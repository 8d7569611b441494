"""Experiment reports: records, fits, recomputable checks, JSON/CSV emission.

JSON layout (keys sorted, no timing)::

    {"experiment": str, "label": str,
     "records": [{"parameter", "value", "residual", "extras": {...}}, ...],
     "fit_specs": [{"name", "model", "x", "y"}, ...],
     "fits": {name: RateFit dict},
     "checks": [{"name", "quantity", "op", "threshold", "observed", "passed"}, ...],
     "passed": bool,
     "provenance": {"config_hash", "version", "seed", "grid_sizes", ...},
     "metrics": {name: scalar or list}}

Timing lives in a ``<name>.timing.json`` sidecar. CSV columns are
``parameter,value,residual,time_s`` followed by sorted extras keys.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rates import fit_rate

CSV_COLUMNS = ("parameter", "value", "residual", "time_s")


def _clean(v):
    """Convert numpy scalars / arrays to plain JSON-friendly values."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


@dataclass
class Record:
    parameter: float
    value: float
    residual: float = 0.0
    time_s: float = field(default=0.0, compare=False)
    extras: dict = field(default_factory=dict)

    def get(self, key: str) -> float:
        if key in ("parameter", "value", "residual"):
            return getattr(self, key)
        return self.extras[key]

    def to_dict(self) -> dict:
        return _clean({"parameter": self.parameter, "value": self.value, "residual": self.residual, "extras": self.extras})


@dataclass(frozen=True)
class FitSpec:
    name: str
    model: str
    x: str = "parameter"
    y: str = "value"


@dataclass(frozen=True)
class Check:
    """``quantity`` grammar:

    * ``fit:<name>:exponent|prefactor|r_squared``
    * ``records:max|min|first|last:<field>``
    * ``records:monotone:<field>`` -> 1.0 if non-increasing within a 10% band
    * ``records:increasing:<field>`` -> 1.0 if non-decreasing within a 10% band
    * ``metric:<name>`` -> a scalar stored in ``ConvergenceReport.metrics``
    """

    name: str
    quantity: str
    op: str
    threshold: object

    def to_dict(self):
        return _clean({"name": self.name, "quantity": self.quantity, "op": self.op, "threshold": self.threshold})


def monotone_nonincreasing(values, band: float = 0.10) -> bool:
    v = list(values)
    return all(b <= a * (1 + band) + 1e-300 for a, b in zip(v, v[1:]))


def _compare(observed: float, op: str, threshold) -> bool:
    if observed is None or (isinstance(observed, float) and math.isnan(observed)):
        return False
    if op == "<":
        return observed < threshold
    if op == "<=":
        return observed <= threshold
    if op == ">":
        return observed > threshold
    if op == ">=":
        return observed >= threshold
    if op == "in":
        lo, hi = threshold
        return lo <= observed <= hi
    raise ValueError(f"unknown comparison {op!r}")


@dataclass
class ConvergenceReport:
    experiment: str
    records: list
    fit_specs: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    label: str = ""
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.parameter)

    def with_metrics(self, metrics: dict) -> "ConvergenceReport":
        self.metrics.update(_clean(metrics))
        return self

    # -- recomputation from records -------------------------------------
    def fits(self) -> dict:
        out = {}
        for spec in self.fit_specs:
            xs = [r.get(spec.x) for r in self.records]
            ys = [r.get(spec.y) for r in self.records]
            try:
                out[spec.name] = fit_rate(xs, ys, spec.model)
            except ValueError:
                out[spec.name] = None
        return out

    def quantity(self, q: str, fits=None):
        kind, *rest = q.split(":")
        if kind == "fit":
            fits = self.fits() if fits is None else fits
            f = fits.get(rest[0])
            return None if f is None else float(getattr(f, rest[1]))
        if kind == "metric":
            v = self.metrics.get(rest[0])
            return None if v is None else float(v)
        if kind == "records":
            agg, key = rest
            vals = [r.get(key) for r in self.records]
            if agg == "monotone":
                return 1.0 if monotone_nonincreasing(vals) else 0.0
            if agg == "increasing":
                return 1.0 if monotone_nonincreasing(vals[::-1]) else 0.0
            if not vals:
                return None
            return float({"max": max, "min": min, "first": lambda v: v[0], "last": lambda v: v[-1]}[agg](vals))
        raise ValueError(f"unknown quantity {q!r}")

    def evaluate(self) -> list:
        fits = self.fits()
        results = []
        for c in self.checks:
            obs = self.quantity(c.quantity, fits)
            results.append({**c.to_dict(), "observed": obs, "passed": bool(_compare(obs, c.op, c.threshold))})
        return results

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.evaluate())

    # -- serialisation --------------------------------------------------
    def to_dict(self) -> dict:
        fits = self.fits()
        return _clean(
            {
                "experiment": self.experiment,
                "label": self.label,
                "records": [r.to_dict() for r in self.records],
                "fit_specs": [{"name": s.name, "model": s.model, "x": s.x, "y": s.y} for s in self.fit_specs],
                "fits": {k: (None if v is None else v.to_dict()) for k, v in fits.items()},
                "checks": self.evaluate(),
                "passed": self.passed,
                "provenance": self.provenance,
                "metrics": self.metrics,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ConvergenceReport":
        records = [Record(r["parameter"], r["value"], r["residual"], 0.0, dict(r.get("extras", {}))) for r in d["records"]]
        specs = [FitSpec(**s) for s in d.get("fit_specs", [])]
        checks = [
            Check(c["name"], c["quantity"], c["op"], tuple(c["threshold"]) if isinstance(c["threshold"], list) else c["threshold"])
            for c in d.get("checks", [])
        ]
        return cls(
            d["experiment"], records, specs, checks, dict(d.get("provenance", {})), d.get("label", ""), dict(d.get("metrics", {}))
        )

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        extra_keys = sorted({k for r in self.records for k in r.extras})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(CSV_COLUMNS) + extra_keys)
        for r in self.records:
            w.writerow([repr(float(r.parameter)), repr(float(r.value)), repr(float(r.residual)), f"{r.time_s:.6f}"]
                       + [repr(float(r.extras[k])) if k in r.extras else "" for k in extra_keys])
        return buf.getvalue()

    def timing(self) -> dict:
        return {"records": [{"parameter": r.parameter, "time_s": r.time_s} for r in self.records],
                "total_s": sum(r.time_s for r in self.records)}


def emit(report: ConvergenceReport, out_dir, formats=("json", "csv"), stem: str | None = None) -> list:
    """Write the report; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or report.experiment
    paths = []
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(report.to_json())
        t = out / f"{stem}.timing.json"
        t.write_text(json.dumps(_clean(report.timing()), sort_keys=True, indent=2) + "\n")
        paths += [p, t]
    if "csv" in formats:
        p = out / f"{stem}.csv"
        p.write_text(report.to_csv())
        paths.append(p)
    return paths


def read_csv(path):
    """Read ``(xs, ys)`` from the parameter and value columns of a report CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["parameter"]) for r in rows], [float(r["value"]) for r in rows]
