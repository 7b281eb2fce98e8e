"""Losses, metrics and data tooling for separating mixtures of noisy speech."""

__version__ = "0.1.0"
