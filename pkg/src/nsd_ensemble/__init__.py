"""Ensemble GSAV-GBDF time stepping for the coupled Navier-Stokes-Darcy system."""

__version__ = "0.1.0"
