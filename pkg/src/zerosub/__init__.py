"""Unsupervised subword modeling for zero-resource speech.

Frame clustering with a Dirichlet-process GMM, cluster-label filtering,
pseudo-phone HMM alignment, multi-task bottleneck feature learning and
minimal-pair ABX evaluation.
"""
from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
