"""Axial super-resolution of anisotropic volumes via 2D diffusion priors."""

__version__ = "0.1.0"
