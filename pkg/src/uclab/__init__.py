"""uclab: simulation lab for joint universal lossy coding and source identification."""

__version__ = "0.1.0"
