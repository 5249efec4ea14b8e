"""Gibbsian analysis of the layer restriction of the 2D Ising plus phase."""
__version__ = "0.1.0"
