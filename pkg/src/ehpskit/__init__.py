"""Evaluation, benchmarking and data-scaling toolkit for expressive human pose and shape estimation."""

__version__ = "0.1.0"
