"""Multilingual verbal MWE identification with lateral inhibition and language-adversarial training."""

__version__ = "0.1.0"
