"""Toolkit for training, evaluating and applying a learnable body-realism
score over precomputed multimodal features."""

__version__ = "0.1.0"

from . import dataset, evaluation, model, numerics, training  # noqa: F401
