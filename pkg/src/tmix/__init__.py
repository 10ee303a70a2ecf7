"""Self-similar mixing flows on the unit torus."""

__version__ = "0.1.0"
