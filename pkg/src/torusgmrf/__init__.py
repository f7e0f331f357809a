"""Gaussian Markov random fields on the two-dimensional torus.

Block-circulant parameterization, exact spectral sampling, conditional
least-squares estimation with penalized model selection, chaos deviation
checks and minimax lower-bound calculators.
"""

__version__ = "0.1.0"
