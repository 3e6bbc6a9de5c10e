"""Dimensional speech emotion recognition with statistical acoustic features and a deep MLP."""

__version__ = "0.1.0"
