"""Slender-body model of perfusion around a thin vessel in a porous half-space."""

__version__ = "0.1.0"
