"""Retinal stage-classification pipeline: preprocessing, annotations, dataset
building, detection backends and evaluation."""

__version__ = "0.1.0"
