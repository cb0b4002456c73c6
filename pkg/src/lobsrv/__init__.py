"""Time-to-fill survival modelling for limit orders."""

__version__ = "0.1.0"
