"""Hierarchical zoom-and-refine object localization trained by deep Q-learning."""

__version__ = "0.1.0"
