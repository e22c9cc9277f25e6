"""Optimally matched cluster hierarchies: entropic transport between cluster
heads, a max-pool matching loss, and a small training/evaluation harness on
synthetic features.

Submodules are imported lazily so that the command line entry point can pin
BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
