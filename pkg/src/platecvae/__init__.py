"""Conditional variational autoencoder surrogates for random strain fields of thin plates."""

__version__ = "0.1.0"
