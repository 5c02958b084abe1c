"""Nonlinear acoustics solvers, a subband front end, synthetic scenes, and RL tuning."""

__version__ = "0.1.0"
