"""Numerical study of noisy Bernoulli-map Markov chains on the torus."""

__version__ = "0.1.0"
