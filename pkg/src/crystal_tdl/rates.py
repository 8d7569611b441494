"""Log-space least-squares fits of convergence rates."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError

MODELS = ("exponential", "algebraic")
_ALIASES = {"exp": "exponential", "alg": "algebraic"}


@dataclass(frozen=True)
class RateFit:
    """``exponential``: y = C exp(-alpha x), exponent = alpha (decay is positive).
    ``algebraic``: y = C x^p, exponent = p (decay is negative)."""

    xs: tuple
    ys: tuple
    model: str
    exponent: float
    prefactor: float
    r_squared: float

    def predict(self, x):
        x = np.asarray(x, float)
        if self.model == "exponential":
            return self.prefactor * np.exp(-self.exponent * x)
        return self.prefactor * x**self.exponent

    def to_dict(self) -> dict:
        d = asdict(self)
        d["xs"] = list(self.xs)
        d["ys"] = list(self.ys)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateFit":
        return cls(tuple(d["xs"]), tuple(d["ys"]), d["model"], d["exponent"], d["prefactor"], d["r_squared"])


def fit_rate(xs, ys, model: str) -> RateFit:
    model = _ALIASES.get(model, model)
    if model not in MODELS:
        raise ValueError(f"unknown rate model {model!r}")
    x = np.asarray(xs, float)
    y = np.asarray(ys, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d of equal length")
    if len(x) < 3:
        raise ValueError("a rate fit needs at least 3 points")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DomainError("rate fits need strictly positive finite ys")
    if model == "algebraic":
        if np.any(x <= 0):
            raise DomainError("algebraic fits need positive xs")
        t = np.log(x)
    else:
        t = x
    ly = np.log(y)
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-24 else 0.0)
    r2 = min(max(r2, 0.0), 1.0)
    exponent = -coef[1] if model == "exponential" else coef[1]
    return RateFit(tuple(float(v) for v in x), tuple(float(v) for v in y), model, float(exponent), float(np.exp(coef[0])), float(r2))


def richardson(xs, ys, orders=(1,)):
    """Extrapolate ``y(x) = y0 + sum_k c_k x^order_k`` to ``x = 0`` by least squares."""
    x = np.asarray(xs, float)
    A = np.column_stack([np.ones_like(x)] + [x**k for k in orders])
    if len(x) < A.shape[1]:
        raise ValueError("not enough points for the requested extrapolation")
    coef, *_ = np.linalg.lstsq(A, np.asarray(ys, float), rcond=None)
    return float(coef[0])
