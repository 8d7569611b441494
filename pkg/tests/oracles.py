"""Independent reference computations used to freeze expected test values.

Nothing here imports the package solvers.
"""

import numpy as np
from scipy import integrate

# int_{[0,1]^3} dV/|r|
CORNER_CUBE_INTEGRAL = 3 * np.log((1 + np.sqrt(3)) / np.sqrt(2)) - np.pi / 4


def corner_cube_integral_quadrature():
    val, _ = integrate.tplquad(
        lambda z, y, x: 1.0 / np.sqrt(x * x + y * y + z * z), 0, 1, 0, 1, 0, 1, epsabs=1e-12, epsrel=1e-12
    )
    return val


def cubic_shell_sum(M):
    """Neutral cube of side 2M+1 unit cells around the origin, simple cubic, a = 1."""
    n = np.arange(-M, M + 1, dtype=float)
    x, y, z = np.meshgrid(n, n, n, indexing="ij")
    r = np.sqrt(x * x + y * y + z * z)
    r[M, M, M] = np.inf
    a = M + 0.5
    background = 8 * a * a * CORNER_CUBE_INTEGRAL
    return (1.0 / r).sum() - background - np.pi / 6


def madelung_simple_cubic_oracle(Ms=(16, 32, 64)):
    """Richardson extrapolation of the shell sums in M^-2 and M^-4."""
    vals = np.array([cubic_shell_sum(M) for M in Ms])
    A = np.column_stack([np.ones(len(Ms)), np.asarray(Ms, float) ** -2, np.asarray(Ms, float) ** -4])
    return np.linalg.solve(A, vals)[0], vals


def gaussian_potential(r, sigma):
    """Potential of a unit-charge 3-d Gaussian with std sigma, by radial quadrature.

    V(r) = (1/r) int_0^r 4 pi s^2 rho(s) ds + int_r^inf 4 pi s rho(s) ds
    """
    rho = lambda s: np.exp(-s * s / (2 * sigma**2)) / (2 * np.pi * sigma**2) ** 1.5
    inner, _ = integrate.quad(lambda s: 4 * np.pi * s * s * rho(s), 0, r, epsabs=1e-14, epsrel=1e-13)
    outer, _ = integrate.quad(lambda s: 4 * np.pi * s * rho(s), r, np.inf, epsabs=1e-14, epsrel=1e-13)
    return inner / r + outer


def gaussian_self_energy(sigma):
    """D(f, f) = int f V for the unit Gaussian, by radial quadrature."""
    rho = lambda s: np.exp(-s * s / (2 * sigma**2)) / (2 * np.pi * sigma**2) ** 1.5
    val, _ = integrate.quad(lambda s: 4 * np.pi * s * s * rho(s) * gaussian_potential(s, sigma), 0, 12 * sigma, epsabs=1e-13, limit=200)
    return val
