"""Learned-dynamics model predictive control for a simulated cutting task."""

__version__ = "0.1.0"
