"""Closed-loop bidirectional brain-computer interface simulation toolkit."""

__version__ = "0.1.0"
