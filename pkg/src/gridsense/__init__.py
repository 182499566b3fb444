"""Robust wireless sensor placement for cyber-physical power grids.

Physical layer simulation, LNSPL cyber layer, GridWatch-style detection,
spectral robustness and a discrete graph-diffusion policy trained with
reward-weighted and experience-feedback cross-entropy.
"""

__version__ = "0.1.0"
