"""Spectrum-conditioned 3D molecular geometry recovery and the chemistry stack around it."""

__version__ = "0.1.0"
