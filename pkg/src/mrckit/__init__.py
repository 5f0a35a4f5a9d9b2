"""Multi-task training toolkit for machine reading comprehension."""

__version__ = "0.1.0"
