"""Phase-space predictive learning stack with a certification suite."""

__version__ = "0.1.0"
