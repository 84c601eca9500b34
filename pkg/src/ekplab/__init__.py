"""Periodic-torus laboratory for the high-friction limit of Euler-Korteweg-Poisson flows."""
from .grid import Grid
from .models import Params

__all__ = ["Grid", "Params"]
__version__ = "0.1.0"
