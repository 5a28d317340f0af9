"""Flat cone surfaces, their unit tangent bundles and foliated spectral problems."""

__version__ = "0.1.0"
