"""Smooth crystal deformations ``Y(x) = x + A x + u_per(x)`` and their atomistic samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DeformationError
from .fields import Lattice


@dataclass(frozen=True)
class FourierMode:
    """``amplitude * sin(2 pi m . s + phase)`` in fractional coordinates ``s``."""

    wavevector: tuple
    amplitude: tuple
    phase: float = 0.0


@dataclass(frozen=True, eq=False)
class DeformationSpec:
    lattice: Lattice
    A: np.ndarray = None
    modes: tuple = field(default=())
    epsilon: float = 1.0

    def __post_init__(self):
        d = self.lattice.dim
        A = np.zeros((d, d)) if self.A is None else np.atleast_2d(np.asarray(self.A, float))
        if A.shape != (d, d):
            raise DeformationError(f"affine part must be {d}x{d}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        modes = tuple(
            m if isinstance(m, FourierMode) else FourierMode(tuple(m[0]), tuple(m[1]), float(m[2]) if len(m) > 2 else 0.0)
            for m in self.modes
        )
        for m in modes:
            if len(m.wavevector) != d or len(m.amplitude) != d:
                raise DeformationError("mode wavevector/amplitude have the wrong dimension")
        object.__setattr__(self, "modes", modes)
        n = 1.0 / self.epsilon
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise DeformationError("epsilon must be 1/n for a positive integer n")
        self.check_bijective()

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def n(self) -> int:
        return int(round(1.0 / self.epsilon))

    def with_epsilon(self, eps: float) -> "DeformationSpec":
        return DeformationSpec(self.lattice, self.A, self.modes, eps)

    def is_trivial(self) -> bool:
        return not self.modes or all(np.allclose(m.amplitude, 0) for m in self.modes)

    def u_per(self, x) -> np.ndarray:
        """Periodic displacement at cartesian points ``x`` (rows)."""
        x = np.atleast_2d(np.asarray(x, float))
        s = self.lattice.to_fractional(x)
        out = np.zeros_like(x)
        for m in self.modes:
            arg = 2 * np.pi * s @ np.asarray(m.wavevector, float) + m.phase
            out += np.sin(arg)[:, None] * np.asarray(m.amplitude, float)[None, :]
        return out

    def grad_u_per(self, x) -> np.ndarray:
        """``d u_per / d x`` at points ``x``, shape ``(npts, d, d)``."""
        x = np.atleast_2d(np.asarray(x, float))
        s = self.lattice.to_fractional(x)
        out = np.zeros((len(x), self.dim, self.dim))
        for m in self.modes:
            k = 2 * np.pi * self.lattice.inverse.T @ np.asarray(m.wavevector, float)
            arg = 2 * np.pi * s @ np.asarray(m.wavevector, float) + m.phase
            out += np.cos(arg)[:, None, None] * np.outer(m.amplitude, k)[None]
        return out

    def Y(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return x + x @ self.A.T + self.u_per(x)

    def gradient(self, x) -> np.ndarray:
        """Deformation gradient ``I + A + grad u_per``."""
        return np.eye(self.dim) + self.A + self.grad_u_per(x)

    def check_bijective(self, samples: int = 64) -> None:
        d = self.dim
        s = np.stack(np.meshgrid(*[np.arange(samples) / samples] * d, indexing="ij"), -1).reshape(-1, d)
        dets = np.linalg.det(self.gradient(self.lattice.to_cartesian(s)))
        if dets.min() <= 0:
            raise DeformationError(f"deformation is not bijective: min det grad Y = {dets.min():.3g}")

    def supercell(self) -> tuple[Lattice, np.ndarray]:
        """Deformed supercell and nucleus positions ``n Y(B j / n)``."""
        n, d = self.n, self.dim
        idx = np.stack(np.meshgrid(*[np.arange(n)] * d, indexing="ij"), -1).reshape(-1, d)
        ref = self.lattice.to_cartesian(idx)
        pos = n * self.Y(ref / n)
        cell = Lattice(n * (np.eye(d) + self.A) @ self.lattice.B)
        return cell, pos
