"""Schema-guided dialogue state tracking at desk scale."""

__version__ = "0.1.0"
