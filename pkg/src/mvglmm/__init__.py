"""Multivariate GLMM analysis of first-year exam outcomes via latent-component graphs."""

__version__ = "0.1.0"
