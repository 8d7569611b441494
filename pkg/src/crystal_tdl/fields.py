"""Lattices, grid fields, smeared nuclear densities and the field snapshot format.

Conventions used throughout the package:

* ``Lattice.B`` holds the cell vectors as *columns*; grid point ``n`` of a
  field with shape ``N`` sits at ``B @ (n / N)``.
* Fourier coefficients are normalised so that ``f(r) = sum_G fhat_G exp(iG.r)``;
  the zero mode is therefore the cell average.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import ResolutionError, ShapeError, SupportError

FFT_WORKERS = -1


@dataclass(frozen=True, eq=False)
class Lattice:
    B: np.ndarray

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim == 0:
            B = B.reshape(1, 1)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] not in (1, 2, 3):
            raise ShapeError(f"lattice matrix must be dim x dim with dim in 1..3, got {B.shape}")
        if abs(np.linalg.det(B)) < 1e-12:
            raise ValueError("lattice matrix is singular")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @classmethod
    def cubic(cls, a: float = 1.0, dim: int = 3) -> "Lattice":
        return cls(a * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.B)))

    @cached_property
    def reciprocal(self) -> np.ndarray:
        rec = 2 * np.pi * np.linalg.inv(self.B).T
        rec.setflags(write=False)
        return rec

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = np.linalg.inv(self.B)
        inv.setflags(write=False)
        return inv

    def scaled(self, s: float) -> "Lattice":
        return Lattice(s * self.B)

    def supercell(self, L) -> "Lattice":
        return Lattice(self.B @ np.diag(np.broadcast_to(np.asarray(L, float), (self.dim,))))

    def deformed(self, F) -> "Lattice":
        return Lattice(np.atleast_2d(np.asarray(F, float)) @ self.B)

    def to_fractional(self, r) -> np.ndarray:
        return np.asarray(r, float) @ self.inverse.T

    def to_cartesian(self, s) -> np.ndarray:
        return np.asarray(s, float) @ self.B.T

    def key(self) -> bytes:
        return self.B.tobytes()

    def __eq__(self, other):
        return isinstance(other, Lattice) and np.array_equal(self.B, other.B)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Lattice({self.B.tolist()})"


class SpectralGrid:
    """Real-FFT bookkeeping for a uniform grid on a lattice cell.

    Instances are immutable and shared through :func:`spectral_grid`.
    """

    def __init__(self, lattice: Lattice, shape: tuple[int, ...]):
        self.lattice = lattice
        self.shape = tuple(int(n) for n in shape)
        self.size = int(np.prod(self.shape))
        self.dV = lattice.volume / self.size

        dim = lattice.dim
        m = []
        for axis, n in enumerate(self.shape):
            if axis == dim - 1:
                f = np.arange(n // 2 + 1, dtype=float)
            else:
                f = np.fft.fftfreq(n, d=1.0 / n)
            m.append(f)
        grids = np.meshgrid(*m, indexing="ij")
        rec = lattice.reciprocal
        self.G = np.stack([sum(rec[c, i] * grids[i] for i in range(dim)) for c in range(dim)])
        self.G2 = np.sum(self.G**2, axis=0)

        # derivative multipliers drop the (real-valued) Nyquist modes
        md = [g.copy() for g in grids]
        for axis, n in enumerate(self.shape):
            if n % 2 == 0:
                md[axis][np.abs(md[axis]) == n // 2] = 0.0
        self.Gd = np.stack([sum(rec[c, i] * md[i] for i in range(dim)) for c in range(dim)])
        for arr in (self.G, self.G2, self.Gd):
            arr.setflags(write=False)

    @cached_property
    def points(self) -> np.ndarray:
        idx = np.meshgrid(*[np.arange(n) / n for n in self.shape], indexing="ij")
        B = self.lattice.B
        pts = np.stack([sum(B[c, i] * idx[i] for i in range(self.lattice.dim)) for c in range(self.lattice.dim)])
        pts.setflags(write=False)
        return pts

    @cached_property
    def rfft_weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum entry in a full Parseval sum."""
        w = np.full(self.G2.shape, 2.0)
        n = self.shape[-1]
        w[..., 0] = 1.0
        if n % 2 == 0:
            w[..., -1] = 1.0
        w.setflags(write=False)
        return w

    def fwd(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values, workers=FFT_WORKERS) / self.size

    def inv(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfftn(coeffs * self.size, s=self.shape, workers=FFT_WORKERS)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return self.inv(-self.G2 * self.fwd(values))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        fh = self.fwd(values)
        return np.stack([self.inv(1j * g * fh) for g in self.Gd])

    def parseval(self, fh: np.ndarray, gh: np.ndarray, multiplier=None) -> float:
        """``int f g`` (times the multiplier) from half-spectrum coefficients."""
        prod = (fh * np.conj(gh)).real * self.rfft_weights
        if multiplier is not None:
            prod = prod * multiplier
        return float(self.lattice.volume * prod.sum())


@functools.lru_cache(maxsize=64)
def _spectral_grid(key: bytes, dim: int, shape: tuple[int, ...]) -> SpectralGrid:
    B = np.frombuffer(key, dtype=float).reshape(dim, dim)
    return SpectralGrid(Lattice(B), shape)


def spectral_grid(lattice: Lattice, shape) -> SpectralGrid:
    return _spectral_grid(lattice.key(), lattice.dim, tuple(int(n) for n in shape))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples of a function on the uniform grid of ``lattice``.

    ``domain_kind`` is ``"periodic_cell"`` for cell-periodic functions and
    ``"padded_free_space"`` for compactly supported data living in a
    computational box.
    """

    lattice: Lattice
    values: np.ndarray
    domain_kind: str = "periodic_cell"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != self.lattice.dim:
            raise ShapeError(f"values have {v.ndim} axes for a {self.lattice.dim}-d lattice")
        if any(n <= 0 or n % 2 for n in v.shape):
            raise ShapeError(f"grid sizes must be even and positive, got {v.shape}")
        if self.domain_kind not in ("periodic_cell", "padded_free_space"):
            raise ValueError(f"unknown domain kind {self.domain_kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def grid(self) -> SpectralGrid:
        return spectral_grid(self.lattice, self.grid_shape)

    @cached_property
    def fourier(self) -> np.ndarray:
        fh = self.grid.fwd(self.values)
        fh.setflags(write=False)
        return fh

    def mean(self) -> float:
        return float(self.fourier[(0,) * self.lattice.dim].real)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.dV)

    def gradient(self) -> np.ndarray:
        return self.grid.gradient(self.values)

    def laplacian(self) -> np.ndarray:
        return self.grid.laplacian(self.values)

    def norm_inf(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.lattice, values, self.domain_kind)

    def same_grid(self, other: "ScalarField") -> bool:
        return self.lattice == other.lattice and self.grid_shape == other.grid_shape

    def _check(self, other):
        if not self.same_grid(other):
            raise ShapeError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            self._check(other)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * other)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return self.with_values(-self.values)

    @classmethod
    def from_function(cls, lattice: Lattice, shape, fn, domain_kind="periodic_cell") -> "ScalarField":
        pts = spectral_grid(lattice, shape).points
        return cls(lattice, fn(*pts), domain_kind)

    @classmethod
    def zeros(cls, lattice: Lattice, shape, domain_kind="periodic_cell") -> "ScalarField":
        return cls(lattice, np.zeros(tuple(shape)), domain_kind)


@dataclass(frozen=True, eq=False)
class NuclearConfiguration:
    """Nucleus centres with the smeared profile ``(1 - (r/w)^2)^4`` on ``r < w``.

    ``lattice=None`` describes a finite cluster; otherwise the centres are one
    period of an infinite crystal and are wrapped into the fundamental cell.
    """

    lattice: Lattice | None
    centers: np.ndarray
    smearing_width: float
    charge_per_nucleus: float = 1.0
    min_distance: float = 1e-6

    def __post_init__(self):
        if self.smearing_width <= 0:
            raise ValueError("smearing width must be positive")
        c = np.array(self.centers, dtype=float)
        dim = self.lattice.dim if self.lattice is not None else (c.shape[1] if c.ndim == 2 and c.size else None)
        if c.size == 0:
            c = np.zeros((0, dim or 3))
        c = np.atleast_2d(c)
        if dim is not None and c.shape[1] != dim:
            raise ShapeError(f"centres have dimension {c.shape[1]}, lattice has {dim}")
        if self.lattice is not None and len(c):
            frac = self.lattice.to_fractional(c)
            frac = frac - np.floor(frac)
            frac[frac >= 1.0 - 1e-14] = 0.0
            c = self.lattice.to_cartesian(frac)
        if self.lattice is None and len(c) > 1:
            d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
            d[np.diag_indices(len(c))] = np.inf
            if d.min() < self.min_distance:
                raise ValueError(f"nuclei closer than the configured floor {self.min_distance}: {d.min():.3g}")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_nuclei(self) -> int:
        return len(self.centers)

    @property
    def total_charge(self) -> float:
        return self.n_nuclei * self.charge_per_nucleus

    @property
    def periodic(self) -> bool:
        return self.lattice is not None

    def with_centers(self, centers, lattice="same") -> "NuclearConfiguration":
        lat = self.lattice if lattice == "same" else lattice
        return NuclearConfiguration(lat, centers, self.smearing_width, self.charge_per_nucleus, self.min_distance)


def bump(r: np.ndarray, w: float) -> np.ndarray:
    s = 1.0 - (r / w) ** 2
    return np.where(s > 0, s, 0.0) ** 4


def required_grid(lattice: Lattice, smearing_width: float, points_across: int = 6) -> tuple[int, ...]:
    """Smallest even grid that puts ``points_across`` samples across a bump."""
    lengths = np.linalg.norm(lattice.B, axis=0)
    n = np.ceil(points_across * lengths / (2 * smearing_width) - 1e-9).astype(int)
    return tuple(int(k + (k % 2)) for k in n)


def check_resolution(lattice: Lattice, shape, smearing_width: float, points_across: int = 6):
    lengths = np.linalg.norm(lattice.B, axis=0)
    h = lengths / np.asarray(shape, float)
    if np.any(2 * smearing_width / h < points_across - 1e-9):
        need = required_grid(lattice, smearing_width, points_across)
        raise ResolutionError(
            f"grid {tuple(shape)} puts fewer than {points_across} points across the nuclear bump "
            f"(width {smearing_width}); need at least {need}"
        )


def _single_center(cell: Lattice, shape, center, w, charge, periodic):
    shape = np.asarray(shape)
    frac = cell.inverse @ center
    c = frac * shape
    extent = w * np.linalg.norm(cell.inverse, axis=1) * shape
    lo = np.floor(c - extent).astype(int)
    hi = np.ceil(c + extent).astype(int)
    idx = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*[i / n for i, n in zip(idx, shape)], indexing="ij")
    disp = [sum(cell.B[a, b] * mesh[b] for b in range(cell.dim)) - center[a] for a in range(cell.dim)]
    r = np.sqrt(sum(x**2 for x in disp))
    local = bump(r, w)
    total = local.sum() * cell.volume / shape.prod()
    if total <= 0:
        raise ResolutionError("bump not sampled by any grid point")
    local *= charge / total
    if not periodic:
        for axis, (i, n) in enumerate(zip(idx, shape)):
            outside = (i < 0) | (i >= n)
            if outside.any():
                sl = [slice(None)] * cell.dim
                sl[axis] = outside
                if np.any(local[tuple(sl)] != 0.0):
                    raise SupportError(f"nucleus at {center} is not contained in the computational box")
        keep = [(i >= 0) & (i < n) for i, n in zip(idx, shape)]
        local = local[np.ix_(*keep)]
        idx = [i[k] for i, k in zip(idx, keep)]
    else:
        idx = [np.mod(i, n) for i, n in zip(idx, shape)]
    return idx, local


def nuclear_density(config: NuclearConfiguration, grid_shape, box: Lattice | None = None) -> ScalarField:
    """Sample the total nuclear charge density on a grid.

    Each smeared nucleus is normalised on the grid itself, so the discrete
    integral equals ``charge_per_nucleus`` per centre to rounding error.
    Finite clusters need ``box``; their centres are given in box coordinates
    (the box spans ``box.B @ [0, 1)^d``).
    """
    if config.periodic:
        cell, kind = config.lattice, "periodic_cell"
        if box is not None and box != cell:
            raise ShapeError("periodic configurations are sampled on their own cell")
    else:
        if box is None:
            raise ValueError("finite clusters need a computational box")
        cell, kind = box, "padded_free_space"
    shape = tuple(int(n) for n in grid_shape)
    if len(shape) != cell.dim:
        raise ShapeError("grid shape does not match the lattice dimension")
    check_resolution(cell, shape, config.smearing_width)
    values = np.zeros(shape)
    for center in config.centers:
        idx, local = _single_center(cell, shape, center, config.smearing_width, config.charge_per_nucleus, config.periodic)
        np.add.at(values, np.ix_(*idx), local)
    return ScalarField(cell, values, kind)


def sobolev_seminorms(f: ScalarField, k: int) -> float:
    """Spectral H^k seminorm ``(int |D^k f|^2)^(1/2)`` of a periodic field (k <= 2)."""
    if not 0 <= k <= 2:
        raise ValueError("k must be 0, 1 or 2")
    g = f.grid
    return float(np.sqrt(max(g.parseval(f.fourier, f.fourier, g.G2**k), 0.0)))


def sobolev_norm(f: ScalarField, k: int) -> float:
    """Full spectral H^k norm with weight ``(1 + |G|^2)^k``; non-decreasing in k."""
    if not 0 <= k <= 2:
        raise ValueError("k must be 0, 1 or 2")
    g = f.grid
    return float(np.sqrt(g.parseval(f.fourier, f.fourier, (1.0 + g.G2) ** k)))


# -- snapshot files -----------------------------------------------------------
#
# little-endian layout:
#   int64 dim | int64 grid_shape[dim] | float64 B[dim*dim] (row-major) |
#   float64 values (row-major, C order)


def save_field(field: ScalarField, path) -> None:
    dim = field.lattice.dim
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", dim))
        fh.write(struct.pack(f"<{dim}q", *field.grid_shape))
        fh.write(np.ascontiguousarray(field.lattice.B, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path, domain_kind: str = "periodic_cell") -> ScalarField:
    data = Path(path).read_bytes()
    (dim,) = struct.unpack_from("<q", data, 0)
    if dim not in (1, 2, 3):
        raise ShapeError(f"bad snapshot header: dim={dim}")
    shape = struct.unpack_from(f"<{dim}q", data, 8)
    off = 8 + 8 * dim
    B = np.frombuffer(data, dtype="<f8", count=dim * dim, offset=off).reshape(dim, dim)
    off += 8 * dim * dim
    n = int(np.prod(shape))
    if len(data) != off + 8 * n:
        raise ShapeError("snapshot size does not match its header")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape)
    return ScalarField(Lattice(B.astype(float)), values.astype(float), domain_kind)
