"""Particle and spectral toolkit for the Vlasov-Poisson system with massless electrons."""

__version__ = "0.1.0"
