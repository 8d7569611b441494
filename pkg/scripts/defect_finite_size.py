"""Vacancy energy J_L in the 1-d rHF chain against a large reference supercell.

Prints J_L, the 1/L-extrapolated J_inf and |J_L - J_ref| so the fitted
algebraic exponent can be compared with the actual decay.
"""

import numpy as np

from crystal_tdl.fields import Lattice, NuclearConfiguration
from crystal_tdl.rates import fit_rate, richardson
from crystal_tdl.rhf import DefectSpec, defect_energy_details, host_fermi_level

host = NuclearConfiguration(Lattice.cubic(3.0, 1), [[0.0]], 0.6)
vac = DefectSpec(host, removed=[[0.0]])
Ls = [4, 6, 8, 12, 16]
ef, gap = host_fermi_level(host, 32)
print(f"host gap {gap:.4f}, Fermi level {ef:.6f}")

J = np.array([defect_energy_details(vac, L, ef)["J"] for L in Ls])
J_ref = defect_energy_details(vac, 32, ef)["J"]
J_inf = richardson(1.0 / np.array(Ls, float), J, (1,))
print(f"J_inf (linear in 1/L) = {J_inf:.8f}, J_32 = {J_ref:.8f}")
for L, j in zip(Ls, J):
    print(f"L={L:3d}  J={j:.8f}  |J-J_inf|={abs(j - J_inf):.3e}  |J-J_32|={abs(j - J_ref):.3e}")
fit = fit_rate(Ls, np.abs(J - J_inf), "algebraic")
print(f"algebraic fit against J_inf: p = {fit.exponent:.3f} (r2 {fit.r_squared:.3f})")
fit = fit_rate(Ls, np.abs(J - J_ref), "exponential")
print(f"exponential fit against J_32: alpha = {fit.exponent:.3f} (r2 {fit.r_squared:.3f})")
