"""Metastable diffusion workbench: landscapes, reduced chains, asymptotics and simulation."""

__version__ = "0.1.0"
