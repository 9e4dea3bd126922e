"""Hierarchical RL-over-MPC predator-prey lab.

A shared policy picks, for each predator, a prey and a target point inside a
region of interest around it; a soft-constrained MPC tracks that target.
End-to-end and shielded-control baselines share the same environment,
observation encoder and trainer.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
