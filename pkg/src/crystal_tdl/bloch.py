"""Plane-wave Bloch machinery: k-grids, bases, Hamiltonians, occupations, densities.

Orbitals are stored as coefficient vectors ``c`` with ``sum |c|^2 = 1``;
the periodic part of the Bloch wave is
``u(r) = |Omega|^(-1/2) sum_G c_G exp(iG.r)``, so ``int_Omega |u|^2 = 1``.
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import BasisError, GapError, MetallicError, ShapeError
from .fields import FFT_WORKERS, Lattice, ScalarField


def monkhorst_grid(lattice: Lattice, L) -> tuple[np.ndarray, np.ndarray]:
    """Gamma-centred uniform k-grid ``k = reciprocal @ (j / L)``, ``j_i = 0..L_i-1``.

    This is exactly the set of supercell Gamma-point momenta of the ``L``-fold
    supercell, which makes the two discretisations interchangeable.
    """
    L = np.broadcast_to(np.asarray(L, int), (lattice.dim,))
    j = np.stack(np.meshgrid(*[np.arange(n) for n in L], indexing="ij"), -1).reshape(-1, lattice.dim)
    k = (j / L) @ lattice.reciprocal.T
    w = np.full(len(k), 1.0 / len(k))
    return k, w


@dataclass(frozen=True, eq=False)
class PlaneWaveBasis:
    lattice: Lattice
    k: np.ndarray
    cutoff: float
    grid_shape: tuple
    miller: np.ndarray  # (nG, dim) integer reciprocal coordinates

    @property
    def size(self) -> int:
        return len(self.miller)

    @functools.cached_property
    def Gk(self) -> np.ndarray:
        return self.miller @ self.lattice.reciprocal.T + self.k

    @functools.cached_property
    def kinetic(self) -> np.ndarray:
        return 0.5 * np.sum(self.Gk**2, axis=1)

    @functools.cached_property
    def grid_index(self) -> tuple:
        return tuple(np.mod(self.miller[:, a], self.grid_shape[a]) for a in range(self.lattice.dim))


def _miller_candidates(lattice: Lattice, k, cutoff):
    gmax = np.sqrt(2 * cutoff) + np.linalg.norm(k)
    # |m_i| <= gmax * |row i of B| / 2pi
    mmax = np.ceil(gmax * np.linalg.norm(lattice.B, axis=0) / (2 * np.pi)).astype(int) + 1
    ranges = [np.arange(-m, m + 1) for m in mmax]
    return np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, lattice.dim)


def plane_wave_basis(lattice: Lattice, k, cutoff: float, grid_shape=None, min_size: int = 4) -> PlaneWaveBasis:
    """Plane waves with ``|G + k|^2 / 2 <= cutoff``; the grid must hold ``2 m_max`` without aliasing."""
    k = np.asarray(k, float).reshape(lattice.dim)
    m = _miller_candidates(lattice, k, cutoff)
    Gk = m @ lattice.reciprocal.T + k
    keep = 0.5 * np.sum(Gk**2, axis=1) <= cutoff * (1 + 1e-12)
    m = m[keep]
    Gk = Gk[keep]
    order = np.lexsort(tuple(m.T[::-1]) + (np.round(np.sum(Gk**2, axis=1), 12),))
    m = m[order]
    if len(m) < min_size:
        raise BasisError(f"cutoff {cutoff} gives {len(m)} plane waves; at least {min_size} are needed")
    need = tuple(int(4 * np.abs(m[:, a]).max() + 2) for a in range(lattice.dim))
    if grid_shape is None:
        grid_shape = need
    grid_shape = tuple(int(n) for n in grid_shape)
    if any(g < n for g, n in zip(grid_shape, need)):
        raise BasisError(f"grid {grid_shape} too coarse for the basis; need at least {need}")
    return PlaneWaveBasis(lattice, k, float(cutoff), grid_shape, m)


def fft_grid_for(lattice: Lattice, kpoints, cutoff: float) -> tuple:
    """Smallest even grid that is alias free for every basis on the k-grid."""
    need = np.zeros(lattice.dim, int)
    for k in kpoints:
        b = plane_wave_basis(lattice, k, cutoff, grid_shape=(10**9,) * lattice.dim, min_size=1)
        need = np.maximum(need, np.abs(b.miller).max(axis=0))
    return tuple(int(4 * n + 2) for n in need)


def potential_coefficients(v: ScalarField) -> np.ndarray:
    """Full (complex) Fourier coefficients of a real periodic potential."""
    return sfft.fftn(v.values, workers=FFT_WORKERS) / v.values.size


def hamiltonian_matrix(basis: PlaneWaveBasis, v_hat: np.ndarray) -> np.ndarray:
    """``H_{GG'} = |G+k|^2/2 delta + v_hat(G - G')`` on the given basis."""
    if v_hat.shape != basis.grid_shape:
        raise ShapeError("potential grid does not match the basis grid")
    m = basis.miller
    diff = m[:, None, :] - m[None, :, :]
    idx = tuple(np.mod(diff[..., a], basis.grid_shape[a]) for a in range(basis.lattice.dim))
    H = v_hat[idx].astype(complex)
    H[np.diag_indices_from(H)] += basis.kinetic
    return 0.5 * (H + H.conj().T)


def bloch_hamiltonian(k, v_eff: ScalarField, cutoff: float) -> np.ndarray:
    """Matrix of ``|-i grad + k|^2 / 2 + v_eff`` on ``{G : |G + k|^2 / 2 <= cutoff}``.

    The basis lives on ``v_eff``'s grid, which must be alias free for it.
    """
    basis = plane_wave_basis(v_eff.lattice, k, cutoff, v_eff.grid_shape)
    return hamiltonian_matrix(basis, potential_coefficients(v_eff))


def orbital_density(basis: PlaneWaveBasis, coeffs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_n weights_n |u_n(r)|^2`` on the grid for one k-point."""
    rho = np.zeros(basis.grid_shape)
    ntot = int(np.prod(basis.grid_shape))
    vol = basis.lattice.volume
    for n in range(coeffs.shape[1]):
        if weights[n] == 0:
            continue
        arr = np.zeros(basis.grid_shape, complex)
        arr[basis.grid_index] = coeffs[:, n]
        psi = sfft.ifftn(arr, workers=FFT_WORKERS) * ntot
        rho += weights[n] * (psi.real**2 + psi.imag**2)
    return rho / vol


@dataclass(frozen=True, eq=False)
class BlochState:
    lattice: Lattice
    kpoints: np.ndarray
    kweights: np.ndarray
    basis_cutoff: float
    orbitals: tuple  # per k: (nG, nbands) complex
    occupations: tuple  # per k: (nbands,) in [0, 1]
    fermi_level: float
    bands: tuple  # per k: eigenvalues of the computed bands
    density: ScalarField
    bases: tuple = field(default=(), repr=False)
    gap: float = float("nan")
    residual: float = float("nan")
    history: tuple = field(default=(), repr=False)
    extra: dict = field(default_factory=dict, repr=False)

    def electrons_per_cell(self) -> float:
        return float(sum(w * np.sum(o) for w, o in zip(self.kweights, self.occupations)))


def fill_canonical(bands, kweights, n_occ: int, gap_floor: float = 0.0):
    """Occupy the lowest ``n_occ`` bands at every k; raise if the spectrum has no gap."""
    homo = max(float(e[n_occ - 1]) for e in bands)
    lumos = [float(e[n_occ]) for e in bands if len(e) > n_occ]
    if not lumos:
        raise BasisError("not enough computed bands to locate the gap")
    lumo = min(lumos)
    gap = lumo - homo
    if gap <= gap_floor:
        raise MetallicError(f"no spectral gap: highest occupied {homo:.6g}, lowest unoccupied {lumo:.6g}", homo, lumo)
    occ = [np.concatenate([np.ones(n_occ), np.zeros(len(e) - n_occ)]) for e in bands]
    return occ, 0.5 * (homo + lumo), gap


def fill_grand_canonical(bands, fermi_level: float, gap_floor: float = 0.0):
    """Occupy every computed state strictly below the Fermi level."""
    occ = [(np.asarray(e) < fermi_level).astype(float) for e in bands]
    closest = min(float(np.min(np.abs(np.asarray(e) - fermi_level))) for e in bands)
    if closest <= gap_floor:
        raise GapError(f"a level sits within {closest:.3g} of the Fermi level {fermi_level:.6g}")
    return occ, closest


# -- checkpoints ---------------------------------------------------------------
#
# layout: uint64 little-endian header length | UTF-8 JSON header |
#         per k-point complex128 orbital block (nG x nbands, C order) |
#         float64 density block (C order)


def save_state(state: BlochState, path) -> None:
    header = {
        "lattice": state.lattice.B.tolist(),
        "kpoints": np.asarray(state.kpoints).tolist(),
        "kweights": np.asarray(state.kweights).tolist(),
        "cutoff": state.basis_cutoff,
        "fermi_level": state.fermi_level,
        "gap": state.gap,
        "residual": state.residual,
        "grid_shape": list(state.density.grid_shape),
        "orbital_shapes": [list(o.shape) for o in state.orbitals],
        "occupations": [np.asarray(o).tolist() for o in state.occupations],
        "bands": [np.asarray(b).tolist() for b in state.bands],
        "miller": [b.miller.tolist() for b in state.bases],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for o in state.orbitals:
            fh.write(np.ascontiguousarray(o, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(state.density.values, dtype="<f8").tobytes())


def load_state(path) -> BlochState:
    with open(path, "rb") as fh:
        data = fh.read()
    (hlen,) = struct.unpack_from("<Q", data, 0)
    h = json.loads(data[8 : 8 + hlen].decode())
    off = 8 + hlen
    orbitals = []
    for shape in h["orbital_shapes"]:
        n = int(np.prod(shape))
        orbitals.append(np.frombuffer(data, dtype="<c16", count=n, offset=off).reshape(shape).astype(complex))
        off += 16 * n
    shape = tuple(h["grid_shape"])
    dens = np.frombuffer(data, dtype="<f8", count=int(np.prod(shape)), offset=off).reshape(shape).astype(float)
    lattice = Lattice(np.array(h["lattice"]))
    kpts = np.array(h["kpoints"], float).reshape(-1, lattice.dim)
    bases = tuple(
        PlaneWaveBasis(lattice, k, h["cutoff"], shape, np.array(m, int).reshape(-1, lattice.dim))
        for k, m in zip(kpts, h["miller"])
    )
    return BlochState(
        lattice=lattice,
        kpoints=kpts,
        kweights=np.array(h["kweights"], float),
        basis_cutoff=h["cutoff"],
        orbitals=tuple(orbitals),
        occupations=tuple(np.array(o, float) for o in h["occupations"]),
        fermi_level=h["fermi_level"],
        bands=tuple(np.array(b, float) for b in h["bands"]),
        density=ScalarField(lattice, dens),
        bases=bases,
        gap=h["gap"],
        residual=h["residual"],
    )
