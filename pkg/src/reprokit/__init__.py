"""Reprogram frozen classifiers for new tasks by training only an input transform and an output map."""

__version__ = "0.1.0"
