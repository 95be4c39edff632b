"""Localization-scheme laboratory for Markov chains on the discrete cube."""

__version__ = "0.1.0"
