"""Rigid-frame diffusion and refinement of protein backbone decoys."""

__version__ = "0.1.0"
