"""Synthetic feeder load data and five from-scratch neural forecasters."""

__version__ = "0.1.0"
