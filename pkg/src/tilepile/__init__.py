"""Sandpile dynamics, Green's functions and spectral parameters on periodic tilings."""

__version__ = "0.1.0"
