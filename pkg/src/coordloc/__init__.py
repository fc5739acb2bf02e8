"""Coordinate-channel localisation: autodiff engine, data pipeline, training and statistics."""

__version__ = "0.1.0"
