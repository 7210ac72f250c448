"""Differentially private learning of Gaussian mixtures via list decoding and private selection."""
from .model import (Dataset, DenseDecomposition, Gaussian, Mixture, affine_transform,
                    dense_decompose, gaussian_create, gaussian_delta, log_density,
                    make_dataset, mixture_create, sample)
from .private_select import BOTTOM, PrivacyParams

__all__ = [
    "BOTTOM", "Dataset", "DenseDecomposition", "Gaussian", "Mixture", "PrivacyParams",
    "affine_transform", "dense_decompose", "gaussian_create", "gaussian_delta",
    "log_density", "make_dataset", "mixture_create", "sample",
]
