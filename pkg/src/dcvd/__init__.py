"""Dual-channel vulnerability detection with statement-level localization."""

__version__ = "0.1.0"
