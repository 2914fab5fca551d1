"""Differentiable multi-channel Gaussian splatting with illumination-invariant priors."""

__version__ = "0.1.0"
