"""Pseudo-spectral traveling-wave machinery for 2D non-resistive MHD on the torus."""

from .spectral import Lattice, StatePair, TorusField, VectorField2, sobolev_norm

__all__ = [
    "Lattice",
    "TorusField",
    "VectorField2",
    "StatePair",
    "sobolev_norm",
]

__version__ = "0.1.0"
