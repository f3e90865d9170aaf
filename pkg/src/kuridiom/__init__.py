"""Sorani Kurdish idiom classification: normalization, tokenization, models, training."""

__version__ = "0.1.0"
