"""Hard-sphere dynamics, pseudo-trajectory series and correlation-set geometry."""

__version__ = "0.1.0"
