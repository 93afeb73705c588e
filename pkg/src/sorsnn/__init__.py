"""Spiking network continual learning with a self-organizing weight/pathway regulator."""

__version__ = "0.1.0"
