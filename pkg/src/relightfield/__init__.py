"""Desk-scale relighting with learned radiance transfer.

Pipeline: path-traced inverse rendering of lighting and material, synthetic
one-light-at-a-time supervision, training of a neural transfer field, and
noise-free environment-map relighting of novel views.
"""

from .accel import NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "__version__"]
