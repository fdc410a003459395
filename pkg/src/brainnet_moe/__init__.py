"""Disease-specific mixture-of-experts classifier over structural connectomes."""

__version__ = "0.1.0"
