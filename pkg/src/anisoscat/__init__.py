"""Inverse scattering workbench for anisotropic media with small defects."""

__version__ = "0.1.0"
