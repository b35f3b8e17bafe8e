"""Checkpoint converter: upstream speech encoders -> xmodal containers."""

__version__ = "0.1.0"
