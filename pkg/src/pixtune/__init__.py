"""Learned per-pixel parameter tuning for image processing filters.

Local image features are mapped through a quadratic-logistic model to
per-pixel filter parameters; the model coefficients are learned by
derivative-free maximization of an image quality metric on training pairs.
Three processors are included: approximate non-local means denoising,
blending of Bayer demosaicers, and TV-regularized Poisson deblurring.
"""

from .model import FORMAT_VERSION

__version__ = FORMAT_VERSION

__all__ = ["__version__"]
