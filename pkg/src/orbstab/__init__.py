"""Orbital stabilization of periodic motions via transverse coordinates."""

__version__ = "0.1.0"
