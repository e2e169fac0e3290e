"""Laplacian state representations learned by stochastic graph drawing."""

__version__ = "0.1.0"
