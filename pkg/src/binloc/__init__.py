"""Binaural sound source localisation: synthetic HRIRs, datasets, CNN models and evaluation.

Submodules are imported on demand (``from binloc.spatial import ...``) so
that the command-line entry point can cap worker threads before numpy loads.
"""

__version__ = "0.1.0"
