"""Periodic and free-space Poisson solvers, Coulomb energies, Madelung constant."""

from __future__ import annotations

import functools

import numpy as np
import scipy.fft as sfft
from scipy.special import erf, erfc

from .errors import ConvergenceError, DomainError, NeutralityError, ShapeError, SupportError
from .fields import FFT_WORKERS, Lattice, ScalarField, spectral_grid

NEUTRALITY_TOL = 1e-10


def coulomb_multiplier(G2: np.ndarray) -> np.ndarray:
    """``4 pi / |G|^2`` with the zero mode removed (used in every dimension)."""
    out = np.zeros_like(G2)
    nz = G2 > 0
    out[nz] = 4 * np.pi / G2[nz]
    return out


def check_neutral(f: ScalarField, tol: float = NEUTRALITY_TOL) -> None:
    m = f.mean()
    scale = max(f.norm_inf(), 1e-300)
    if abs(m) > tol * scale:
        raise NeutralityError(f"cell is not neutral: mean = {m:.3e} (|f|_inf = {scale:.3e})")


def poisson_periodic(f: ScalarField, check: bool = True) -> ScalarField:
    """Zero-mean solution of ``-Delta V = 4 pi f`` on the cell."""
    if f.domain_kind != "periodic_cell":
        raise DomainError("poisson_periodic needs a periodic field")
    if check:
        check_neutral(f)
    g = f.grid
    return f.with_values(g.inv(coulomb_multiplier(g.G2) * f.fourier))


def periodic_potential_values(grid, values: np.ndarray) -> np.ndarray:
    """Unchecked array version of :func:`poisson_periodic` (mean dropped)."""
    return grid.inv(coulomb_multiplier(grid.G2) * grid.fwd(values))


class FreeSpaceCoulomb:
    """Convolution with ``1/|r|`` for data supported in a 3-d box.

    The kernel is split as ``erf(r/s)/r + erfc(r/s)/r``. The smooth long-range
    part is sampled on the doubled (zero padded) grid with minimum-image
    offsets, which makes the circular convolution exact for every pair of
    points in the box. The short-range part is applied through its analytic
    Fourier transform ``4 pi (1 - exp(-k^2 s^2/4)) / k^2``; with ``s`` a few
    grid spacings its periodic images are negligible. Both pieces are
    spectrally accurate for smooth data, so no singular-cell correction is
    needed.
    """

    def __init__(self, box: Lattice, shape, split_width: float | None = None):
        if box.dim != 3:
            raise DomainError("free-space Coulomb is only defined in three dimensions")
        self.box = box
        self.shape = tuple(int(n) for n in shape)
        self.pad_shape = tuple(2 * n for n in self.shape)
        self.pad_lattice = box.scaled(2.0)
        h = float(np.max(np.linalg.norm(box.B, axis=0) / np.asarray(self.shape)))
        self.s = 4.0 * h if split_width is None else float(split_width)
        self.dV = box.volume / np.prod(self.shape)
        self._grad = None

        grid = spectral_grid(self.pad_lattice, self.pad_shape)
        self._pad_grid = grid
        disp = self._min_image_offsets()
        r = np.sqrt(sum(x**2 for x in disp))
        klong = np.empty_like(r)
        small = r < 1e-12
        klong[~small] = erf(r[~small] / self.s) / r[~small]
        klong[small] = 2.0 / (np.sqrt(np.pi) * self.s)
        self._disp, self._r = disp, r
        self.multiplier = sfft.rfftn(klong, workers=FFT_WORKERS) * self.dV + self._short_hat(grid.G2)

    def _min_image_offsets(self):
        idx = np.meshgrid(*[np.arange(m) for m in self.pad_shape], indexing="ij")
        frac = [(i + m // 2) % m - m // 2 for i, m in zip(idx, self.pad_shape)]
        frac = [f / n for f, n in zip(frac, self.shape)]
        B = self.box.B
        return [sum(B[c, a] * frac[a] for a in range(3)) for c in range(3)]

    def _short_hat(self, G2):
        out = np.empty_like(G2)
        nz = G2 > 0
        out[nz] = 4 * np.pi * (-np.expm1(-G2[nz] * self.s**2 / 4)) / G2[nz]
        out[~nz] = np.pi * self.s**2
        return out

    def _pad(self, values):
        pad = np.zeros(self.pad_shape)
        pad[tuple(slice(0, n) for n in self.shape)] = values
        return pad

    def _crop(self, values):
        return values[tuple(slice(0, n) for n in self.shape)]

    def potential(self, values: np.ndarray) -> np.ndarray:
        fh = sfft.rfftn(self._pad(values), workers=FFT_WORKERS)
        return self._crop(sfft.irfftn(fh * self.multiplier, s=self.pad_shape, workers=FFT_WORKERS))

    def field(self, values: np.ndarray) -> np.ndarray:
        """Gradient of the potential, shape ``(3, *shape)``."""
        if self._grad is None:
            r = self._r
            s = self.s
            dk = np.zeros_like(r)
            nz = r > 1e-12
            rr = r[nz]
            # d/dr [erf(r/s)/r]
            dk[nz] = (2 / (np.sqrt(np.pi) * s)) * np.exp(-((rr / s) ** 2)) / rr - erf(rr / s) / rr**2
            G = self._pad_grid.Gd
            short = self._short_hat(self._pad_grid.G2)
            mults = []
            for c in range(3):
                comp = np.zeros_like(r)
                comp[nz] = dk[nz] * self._disp[c][nz] / rr
                mults.append(sfft.rfftn(comp, workers=FFT_WORKERS) * self.dV + 1j * G[c] * short)
            self._grad = mults
        fh = sfft.rfftn(self._pad(values), workers=FFT_WORKERS)
        return np.stack(
            [self._crop(sfft.irfftn(fh * m, s=self.pad_shape, workers=FFT_WORKERS)) for m in self._grad]
        )


@functools.lru_cache(maxsize=4)
def _free_solver(key: bytes, shape: tuple[int, ...]) -> FreeSpaceCoulomb:
    return FreeSpaceCoulomb(Lattice(np.frombuffer(key, dtype=float).reshape(3, 3)), shape)


def free_solver(box: Lattice, shape) -> FreeSpaceCoulomb:
    if box.dim != 3:
        raise DomainError("free-space Coulomb is only defined in three dimensions")
    return _free_solver(box.key(), tuple(int(n) for n in shape))


def check_support(f: ScalarField, margin: float, tol: float = 1e-8) -> None:
    """Require ``|f| <= tol * |f|_inf`` within ``margin`` (fraction of the box) of its faces."""
    if margin <= 0:
        return
    scale = f.norm_inf()
    if scale == 0:
        return
    for axis, n in enumerate(f.grid_shape):
        k = int(np.ceil(margin * n))
        v = np.moveaxis(np.abs(f.values), axis, 0)
        edge = max(v[:k].max(), v[n - k :].max()) if k else 0.0
        if edge > tol * scale:
            raise SupportError(
                f"data reaches within {margin:.2f} of the box face along axis {axis} "
                f"(|f| = {edge:.2e} vs {scale:.2e})"
            )


def poisson_free(f: ScalarField, padding_factor: float = 2.0, margin: float = 0.25) -> ScalarField:
    """Free-space potential ``V = f * 1/|r|`` (so ``-Delta V = 4 pi f`` on R^3).

    Only the doubled grid is supported: it is already exact for data anywhere
    in the box.
    """
    if f.lattice.dim != 3:
        raise DomainError("poisson_free is three-dimensional")
    if padding_factor != 2.0:
        raise ValueError("only padding_factor = 2 is implemented")
    check_support(f, margin)
    solver = free_solver(f.lattice, f.grid_shape)
    return ScalarField(f.lattice, solver.potential(f.values), "padded_free_space")


def coulomb_energy(f: ScalarField, g: ScalarField, margin: float = 0.0) -> float:
    """Coulomb pairing ``D(f, g)``; periodic fields use the zero-mean cell form."""
    if not f.same_grid(g):
        raise ShapeError("fields live on different grids")
    if f.domain_kind != g.domain_kind:
        raise DomainError("cannot pair a periodic field with a free-space one")
    if f.domain_kind == "periodic_cell":
        check_neutral(f)
        check_neutral(g)
        grid = f.grid
        return grid.parseval(f.fourier, g.fourier, coulomb_multiplier(grid.G2))
    check_support(f, margin)
    check_support(g, margin)
    solver = free_solver(f.lattice, f.grid_shape)
    return float(np.sum(f.values * solver.potential(g.values)) * solver.dV)


# -- Madelung constant --------------------------------------------------------


def _lattice_points(M: np.ndarray, cutoff: float) -> np.ndarray:
    """All vectors ``M @ n`` (n integer) with norm <= cutoff, as rows."""
    inv = np.linalg.inv(M)
    nmax = np.ceil(cutoff * np.linalg.norm(inv, axis=1)).astype(int)
    ranges = [np.arange(-k, k + 1) for k in nmax]
    n = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(ranges), -1)
    pts = (M @ n).T
    return pts[np.linalg.norm(pts, axis=1) <= cutoff]


def ewald_parts(lattice: Lattice, eta: float, real_cut: float, recip_cut: float):
    """Ewald pieces of the Madelung constant and the outermost-shell sizes."""
    vol = lattice.volume
    R = _lattice_points(lattice.B, real_cut)
    r = np.linalg.norm(R, axis=1)
    r = r[r > 0]
    real_terms = erfc(eta * r) / r
    G = _lattice_points(lattice.reciprocal, recip_cut)
    g2 = np.sum(G**2, axis=1)
    g2 = g2[g2 > 0]
    recip_terms = (4 * np.pi / vol) * np.exp(-g2 / (4 * eta**2)) / g2
    real = real_terms.sum()
    recip = recip_terms.sum()
    self_term = -2 * eta / np.sqrt(np.pi)
    background = -np.pi / (eta**2 * vol)
    shell_r = real_terms[r > 0.9 * real_cut].sum()
    shell_g = recip_terms[np.sqrt(g2) > 0.9 * recip_cut].sum()
    return real + recip + self_term + background, max(abs(shell_r), abs(shell_g))


def madelung_constant(
    lattice: Lattice, eta: float | None = None, tol: float = 1e-13, real_cut: float | None = None, recip_cut: float | None = None
) -> float:
    """Finite part at the origin of the zero-mean periodic Coulomb kernel.

    ``eta`` is the Ewald splitting parameter; the default scales with the cell
    so the result obeys ``m(sB) = m(B)/s`` up to rounding.
    """
    if lattice.dim != 3:
        raise DomainError("the Madelung constant is computed for three-dimensional lattices")
    if eta is None:
        eta = np.sqrt(np.pi) / lattice.volume ** (1 / 3)
    eta = float(eta)
    if eta <= 0:
        raise ValueError("splitting parameter must be positive")
    rc = 6.0 / eta if real_cut is None else real_cut
    gc = 12.6 * eta if recip_cut is None else recip_cut
    value, shell = ewald_parts(lattice, eta, rc, gc)
    if shell > tol * max(1.0, abs(value)):
        raise ConvergenceError(
            f"Ewald sums not converged at cutoffs ({rc:.3g}, {gc:.3g}): outer shell contributes {shell:.2e}",
            history=[shell],
        )
    return float(value)


def madelung_experiment(
    lattice: Lattice,
    etas=(1.0, 1.5, 2.0, 3.0),
    scales=(0.5, 2.0, 3.0),
    tol: float = 1e-13,
    eta_tol: float = 1e-8,
    scaling_tol: float = 1e-10,
):
    """Ewald values for several splitting parameters plus the ``m(sB) = m(B)/s`` law.

    ``etas`` are in units of the default splitting parameter of the cell.
    """
    from .report import Check, ConvergenceReport, Record

    base = madelung_constant(lattice, tol=tol)
    eta0 = np.sqrt(np.pi) / lattice.volume ** (1 / 3)
    records = []
    for e in sorted(etas):
        m = madelung_constant(lattice, eta=e * eta0, tol=tol)
        records.append(Record(float(e), m, abs(m - base), 0.0, {"eta": e * eta0}))
    scaled = {float(s): madelung_constant(lattice.scaled(s), tol=tol) for s in sorted(scales)}
    eta_spread = max(abs(r.value - base) for r in records) / abs(base)
    scaling_dev = max(abs(s * v - base) for s, v in scaled.items()) / abs(base)
    checks = [
        Check("independent of the splitting parameter", "metric:eta_spread", "<", eta_tol),
        Check("scaling law", "metric:scaling_deviation", "<", scaling_tol),
    ]
    report = ConvergenceReport("madelung", records, [], checks, {"lattice": lattice.B.tolist()})
    return report.with_metrics(
        {"madelung": base, "eta_spread": eta_spread, "scaling_deviation": scaling_dev,
         "scaled": [[s, v] for s, v in scaled.items()]}
    )
