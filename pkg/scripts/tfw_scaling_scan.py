"""Scaling-limit exponent of the TFW energy for a few deformation amplitudes."""

import math

from crystal_tdl.harness import run

base = "[experiment]\nname = tfw-scaling\n[model]\namplitude = {amp}\nphase = {phase}\n"
for amp in (0.1, 0.2, 0.3):
    rep = run(base.format(amp=amp, phase=0.2 * math.pi), out_dir=False)
    fit = rep.fits()["eps"]
    print(f"amplitude {amp}: p = {fit.exponent:.3f}, r2 = {fit.r_squared:.4f}, passed {rep.passed}")
