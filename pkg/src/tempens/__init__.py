"""Temporal ensembling for semi-supervised classification on MNIST-family data."""

__version__ = "0.1.0"
