"""Slicing of probabilistic programs given as pCFGs, with an exact interpreter."""

__version__ = "0.1.0"
