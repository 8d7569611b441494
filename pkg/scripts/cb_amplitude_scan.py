"""KS Cauchy-Born deviation as a function of the displacement amplitude.

The deviation should be linear in the amplitude for small amplitudes and
decrease with eps; the affine case sits at the solver floor.
"""

from crystal_tdl.deformation import DeformationSpec, FourierMode
from crystal_tdl.fields import Lattice, NuclearConfiguration
from crystal_tdl.ksdft import cb_comparison_experiment

lat = Lattice.cubic(3.0, 1)
chain = NuclearConfiguration(lat, [[0.0]], 0.6)
eps = (1 / 2, 1 / 4, 1 / 8)

for amp in (0.0, 0.005, 0.01, 0.02, 0.04):
    modes = (FourierMode((1,), (amp,)),) if amp else ()
    deform = DeformationSpec(lat, [[0.05 if amp == 0 else 0.0]], modes)
    rep = cb_comparison_experiment(deform, chain, eps_list=eps)
    devs = "  ".join(f"n={r.extras['n']}: {r.value:.3e}" for r in sorted(rep.records, key=lambda r: r.extras["n"]))
    fit = rep.fits().get("eps")
    extra = f"exponent {fit.exponent:.3f}" if fit is not None else "affine"
    print(f"amplitude {amp:.3f}: {devs}   {extra}")
