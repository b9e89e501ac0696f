"""Sampling toolkit: MCMC with a free-energy-modulated diffusion along a
collective variable, benchmarked on a dimer in a WCA solvent."""

__version__ = "0.1.0"

from .system import SystemParams, cv_eval, lattice_config  # noqa: F401
from .latent import LatentGrid, Profile  # noqa: F401
from .diffusion import DiffusionSpec  # noqa: F401
