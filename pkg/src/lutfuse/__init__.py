"""Fast infrared/visible image fusion with a distilled 4-D lookup table."""

__version__ = "0.1.0"
