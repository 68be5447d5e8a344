"""Rare-event logistic regression with resampling, bagged ensembles and
time-respecting validation."""

__version__ = "0.1.0"
