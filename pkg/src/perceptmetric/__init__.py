"""perceptmetric: learns a perceptual distance over signals from
high-/low-margin triplet comparisons, with spectral features, three
distance models, and a full evaluation harness."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
