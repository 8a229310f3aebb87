"""Hilbert expansion with Prandtl and Knudsen layers for the scaled Boltzmann/BGK equation."""

__version__ = "0.1.0"
