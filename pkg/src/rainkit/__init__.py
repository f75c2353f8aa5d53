"""Region-aware adaptive instance normalization for image harmonization."""

__version__ = "0.1.0"
