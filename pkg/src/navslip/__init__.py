"""Boussinesq convection in periodic channels with Navier-slip walls."""

__version__ = "0.1.0"
