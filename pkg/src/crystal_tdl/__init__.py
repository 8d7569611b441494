"""Spectral-grid TFW, reduced Hartree-Fock and Kohn-Sham solvers with
thermodynamic-limit and Cauchy-Born experiments."""

__version__ = "0.1.0"
